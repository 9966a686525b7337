use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precision matrix is not positive definite (pivot {pivot} = {value:e})")]
    SingularPrecision { pivot: usize, value: f64 },

    #[error("covariance matrix is not positive definite after jitter {jitter:e}")]
    SingularCovariance { jitter: f64 },

    #[error("ill-conditioned posterior: {0}")]
    Conditioning(String),

    #[error("chain is empty")]
    EmptyChain,

    #[error("sampler aborted at iteration {iteration} (N = {n_grid}, kappa = {kappa}): {source}")]
    Sampler {
        iteration: usize,
        n_grid: usize,
        kappa: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the linear algebra (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularPrecision { .. }
            | Error::SingularCovariance { .. }
            | Error::Conditioning(_) => true,
            Error::Sampler { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
