//! Grid-interpolation prior: coefficients are the values of a stationary
//! parent GP at the grid nodes, so their covariance is Toeplitz in 1d and
//! block-Toeplitz with Toeplitz blocks in 2d.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{n_coeffs, BasisExpansion};
use crate::error::{domain, Error, Result};
use crate::kernels::KernelSpec;

/// Relative diagonal jitter levels tried after a failed factorization.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

/// Covariance of the grid values `(f(u/N))_u` for a stationary kernel.
#[derive(Debug, Clone)]
pub struct GridCovariance {
    n_grid: usize,
    dim: usize,
    kernel: KernelSpec,
    scale: f64,
    // d = 1: k(m/N) for m = 0..=N.  d = 2: k(|(p, q)|/N) at p * (N+1) + q.
    generator: Vec<f64>,
}

/// A Cholesky factor of `G_N + jitter * k(0) I`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub chol: Cholesky<f64, Dyn>,
    /// Relative jitter that was added (0 when none was needed).
    pub jitter: f64,
}

pub fn grid_covariance(n_grid: usize, dim: usize, kernel: KernelSpec) -> Result<GridCovariance> {
    if n_grid < 1 {
        return domain("grid size must be at least 1");
    }
    if !(1..=2).contains(&dim) {
        return Err(Error::Unsupported(format!("grid covariance supports d in {{1, 2}}, got {dim}")));
    }
    kernel.validate()?;
    let nf = n_grid as f64;
    let generator = match dim {
        1 => (0..=n_grid).map(|m| kernel.cov(m as f64 / nf)).collect::<Result<Vec<_>>>()?,
        _ => {
            let mut g = Vec::with_capacity((n_grid + 1) * (n_grid + 1));
            for p in 0..=n_grid {
                for q in 0..=n_grid {
                    g.push(kernel.cov(((p * p + q * q) as f64).sqrt() / nf)?);
                }
            }
            g
        }
    };
    Ok(GridCovariance { n_grid, dim, kernel, scale: 1.0, generator })
}

impl GridCovariance {
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn size(&self) -> usize {
        n_coeffs(self.n_grid, self.dim)
    }

    /// Generator values (first row in 1d, distance table in 2d), unscaled.
    pub fn generator(&self) -> &[f64] {
        &self.generator
    }

    /// Same covariance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> GridCovariance {
        GridCovariance { scale: self.scale * factor, ..self.clone() }
    }

    /// Multiplier applied on top of the kernel values.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Entry between linear multi-indices `u` and `v`.
    pub fn entry(&self, u: usize, v: usize) -> f64 {
        let m = self.n_grid + 1;
        let raw = match self.dim {
            1 => self.generator[u.abs_diff(v)],
            _ => {
                let (u1, u2) = (u / m, u % m);
                let (v1, v2) = (v / m, v % m);
                self.generator[u1.abs_diff(v1) * m + u2.abs_diff(v2)]
            }
        };
        self.scale * raw
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let s = self.size();
        DMatrix::from_fn(s, s, |i, j| self.entry(i, j))
    }

    /// Cholesky factor with the escalating jitter policy.
    pub fn factor(&self) -> Result<CovarianceFactor> {
        factor_with_jitter(self.dense())
    }
}

/// Cholesky of a covariance matrix, retrying with `lambda * mean(diag)` added
/// to the diagonal for each `lambda` in [`JITTER_LADDER`].
pub fn factor_with_jitter(m: DMatrix<f64>) -> Result<CovarianceFactor> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(CovarianceFactor { chol, jitter: 0.0 });
    }
    let n = m.nrows().max(1);
    let diag_scale = m.diagonal().iter().sum::<f64>() / n as f64;
    let mut last = 0.0;
    for &lambda in &JITTER_LADDER {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += lambda * diag_scale;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(CovarianceFactor { chol, jitter: lambda });
        }
        last = lambda;
    }
    Err(Error::SingularCovariance { jitter: last })
}

/// Exact draw `w ~ N(0, G_N)` as `L z`.
pub fn sample_prior<R: Rng + ?Sized>(cov: &GridCovariance, rng: &mut R) -> Result<BasisExpansion> {
    let f = cov.factor()?;
    let z = DVector::from_fn(cov.size(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = f.chol.l() * z;
    BasisExpansion::new(cov.n_grid, cov.dim, w.as_slice().to_vec())
}
