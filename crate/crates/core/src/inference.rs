//! Conjugate coefficient posterior, marginal evidence for `(N, kappa)`, and
//! the hierarchical Metropolis-Hastings sampler.
//!
//! Given `(N, kappa)` the coefficients have a Gaussian posterior
//! `N(mu*, G*)` with `G*^{-1} = G^{-1} + Phi^T Phi / sigma^2` and
//! `mu* = G* Phi^T y / sigma^2`. Integrating them out gives
//!
//! ```text
//! p(N, kappa | D) ∝ p(N) p(kappa) (|G*| / |G|)^{1/2} exp(mu*^T G*^{-1} mu* / 2)
//! ```
//!
//! which is what [`log_marginal`] evaluates (on the log scale, with the raw
//! log prior weights).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{BandCholesky, SymBandMatrix};
use crate::basis::{design_matrix, eval_coeffs, n_coeffs, SparseDesign};
use crate::error::{domain, Error, Result};
use crate::gpi::{factor_with_jitter, grid_covariance, GridCovariance};
use crate::kernels::{tau_squared, KernelFamily, KernelSpec};
use crate::spde::{precision, PrecisionOperator};
use crate::special::ln_gamma;
use crate::stats::{log_sum_exp, quantile_sorted};

/// Quantile levels used when none are requested.
pub const DEFAULT_LEVELS: [f64; 2] = [0.025, 0.975];

/// Evidence values kept per chain before the cache is flushed.
const CACHE_CAPACITY: usize = 4096;

/// Observations `y_i = f(x_i) + eps_i` with known noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    sigma_sq: f64,
}

impl Dataset {
    /// `x` holds `n` row-major points of dimension `dim`.
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma_sq: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        if x.len() != y.len() * dim {
            return domain(format!("{} coordinates for {} responses in dimension {dim}", x.len(), y.len()));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return domain(format!("noise variance must be positive, got {sigma_sq}"));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return domain(format!("coordinate {v} outside [0, 1]"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return domain("responses must be finite");
        }
        Ok(Self { dim, x, y, sigma_sq })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn with_sigma_sq(&self, sigma_sq: f64) -> Result<Self> {
        Self::new(self.x.clone(), self.y.clone(), sigma_sq, self.dim)
    }

    pub fn design(&self, n_grid: usize) -> Result<SparseDesign> {
        design_matrix(&self.x, n_grid, self.dim)
    }
}

/// Prior on the inverse length-scale `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaPrior {
    /// Density `kappa^{shape-1} exp(-kappa/scale) / (Gamma(shape) scale^shape)`.
    Gamma { shape: f64, scale: f64 },
    /// Finite support with unnormalized log weights.
    Discrete { values: Vec<f64>, log_weights: Vec<f64> },
    PointMass { value: f64 },
}

fn same_kappa(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

impl KappaPrior {
    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        let p = KappaPrior::Gamma { shape, scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KappaPrior::Gamma { shape, scale } => {
                if !(*shape > 0.0 && *scale > 0.0 && shape.is_finite() && scale.is_finite()) {
                    return domain(format!("Gamma prior needs positive parameters, got ({shape}, {scale})"));
                }
            }
            KappaPrior::Discrete { values, log_weights } => {
                if values.is_empty() || values.len() != log_weights.len() {
                    return domain("discrete kappa prior needs matching non-empty values and weights");
                }
                if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return domain("kappa support must be positive");
                }
                if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY)
                    || log_weights.iter().all(|w| *w == f64::NEG_INFINITY)
                {
                    return domain("kappa weights are not normalizable");
                }
            }
            KappaPrior::PointMass { value } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return domain(format!("kappa must be positive, got {value}"));
                }
            }
        }
        Ok(())
    }

    /// Log density (Gamma) or raw log weight (discrete); `-inf` off the support.
    pub fn log_density(&self, kappa: f64) -> f64 {
        match self {
            KappaPrior::Gamma { shape, scale } => {
                if kappa <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                (shape - 1.0) * kappa.ln() - kappa / scale - ln_gamma(*shape) - shape * scale.ln()
            }
            KappaPrior::Discrete { values, log_weights } => values
                .iter()
                .position(|&v| same_kappa(v, kappa))
                .map_or(f64::NEG_INFINITY, |i| log_weights[i]),
            KappaPrior::PointMass { value } => {
                if same_kappa(*value, kappa) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            KappaPrior::Gamma { shape, scale } => {
                Gamma::new(*shape, *scale).expect("validated Gamma parameters").sample(rng)
            }
            KappaPrior::Discrete { values, log_weights } => values[sample_log_weights(log_weights, rng)],
            KappaPrior::PointMass { value } => *value,
        }
    }

    /// A representative value used to start chains (mean or heaviest atom).
    pub fn center(&self) -> f64 {
        match self {
            KappaPrior::Gamma { shape, scale } => shape * scale,
            KappaPrior::Discrete { values, log_weights } => values[argmax(log_weights)],
            KappaPrior::PointMass { value } => *value,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    if log_weights.len() == 1 {
        return 0;
    }
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - m).exp()).collect();
    WeightedIndex::new(&w).expect("validated weights").sample(rng)
}

/// Independent priors on the grid size `N` and on `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPrior {
    pub n_support: Vec<usize>,
    /// Unnormalized log weights of `n_support`.
    pub n_log_weights: Vec<f64>,
    pub kappa: KappaPrior,
}

impl HyperPrior {
    pub fn new(n_support: Vec<usize>, n_log_weights: Vec<f64>, kappa: KappaPrior) -> Result<Self> {
        let p = Self { n_support, n_log_weights, kappa };
        p.validate()?;
        Ok(p)
    }

    /// `p(N) ∝ exp(-rate N)` on `support`.
    pub fn exp_decay(support: Vec<usize>, rate: f64, kappa: KappaPrior) -> Result<Self> {
        let w = support.iter().map(|&n| -rate * n as f64).collect();
        Self::new(support, w, kappa)
    }

    pub fn uniform(support: Vec<usize>, kappa: KappaPrior) -> Result<Self> {
        let w = vec![0.0; support.len()];
        Self::new(support, w, kappa)
    }

    /// Point mass at `(n_grid, kappa)`.
    pub fn fixed(n_grid: usize, kappa: f64) -> Result<Self> {
        Self::new(vec![n_grid], vec![0.0], KappaPrior::PointMass { value: kappa })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_support.is_empty() || self.n_support.len() != self.n_log_weights.len() {
            return domain("N support must be non-empty with one log weight per value");
        }
        if self.n_support.contains(&0) {
            return domain("grid sizes must be positive");
        }
        let mut sorted = self.n_support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.n_support.len() {
            return domain("N support has duplicates");
        }
        if self.n_log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY)
            || self.n_log_weights.iter().all(|w| *w == f64::NEG_INFINITY)
        {
            return domain("N weights are not normalizable");
        }
        self.kappa.validate()
    }

    /// Raw log weight of `n_grid`, `-inf` outside the support.
    pub fn log_prior_n(&self, n_grid: usize) -> f64 {
        self.n_support
            .iter()
            .position(|&n| n == n_grid)
            .map_or(f64::NEG_INFINITY, |i| self.n_log_weights[i])
    }

    pub fn log_prior(&self, n_grid: usize, kappa: f64) -> f64 {
        let ln = self.log_prior_n(n_grid);
        if ln == f64::NEG_INFINITY {
            return ln;
        }
        ln + self.kappa.log_density(kappa)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.n_support[sample_log_weights(&self.n_log_weights, rng)]
    }

    /// Most probable `N` (first on ties).
    pub fn mode_n(&self) -> usize {
        self.n_support[argmax(&self.n_log_weights)]
    }
}

/// How the coefficient prior is scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceScale {
    /// Kernel or SPDE variance exactly as parameterized (`tau^2` for Matérn).
    #[default]
    Verbatim,
    /// Divide by the marginal variance of the parent process.
    Unit,
}

/// Which coefficient prior is attached to a grid `N` and `kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorModel {
    Gpi {
        family: KernelFamily,
        /// Matérn smoothness; ignored by the squared-exponential family.
        #[serde(default)]
        nu: Option<f64>,
        dim: usize,
        #[serde(default)]
        variance: VarianceScale,
    },
    Spde {
        beta: u32,
        #[serde(default)]
        variance: VarianceScale,
    },
}

impl PriorModel {
    pub fn dim(&self) -> usize {
        match self {
            PriorModel::Gpi { dim, .. } => *dim,
            PriorModel::Spde { .. } => 1,
        }
    }

    /// Parent kernel of a GPI model at `kappa`.
    pub fn kernel(&self, kappa: f64) -> Result<Option<KernelSpec>> {
        match self {
            PriorModel::Gpi { family, nu, dim, .. } => Ok(Some(match family {
                KernelFamily::Matern => {
                    let nu = nu.ok_or_else(|| Error::Config("Matérn GPI prior needs nu".into()))?;
                    KernelSpec::matern(kappa, nu, *dim)?
                }
                KernelFamily::SquaredExponential => KernelSpec::squared_exponential(kappa, *dim)?,
            })),
            PriorModel::Spde { .. } => Ok(None),
        }
    }

    pub fn build(&self, n_grid: usize, kappa: f64) -> Result<CoefficientPrior> {
        match self {
            PriorModel::Gpi { dim, variance, .. } => {
                let kernel = self.kernel(kappa)?.expect("gpi kernel");
                let cov = grid_covariance(n_grid, *dim, kernel)?;
                Ok(CoefficientPrior::Covariance(match variance {
                    VarianceScale::Verbatim => cov,
                    VarianceScale::Unit => cov.scaled(1.0 / kernel.variance()),
                }))
            }
            PriorModel::Spde { beta, variance } => {
                let q = precision(n_grid, kappa, *beta)?;
                Ok(CoefficientPrior::Precision(match variance {
                    VarianceScale::Verbatim => q,
                    VarianceScale::Unit => q.scaled(tau_squared(kappa, *beta as f64 - 0.5, 1)?),
                }))
            }
        }
    }
}

/// A Gaussian prior on the coefficient vector in one of its computational forms.
#[derive(Debug, Clone)]
pub enum CoefficientPrior {
    Covariance(GridCovariance),
    Precision(PrecisionOperator),
    /// Arbitrary dense covariance.
    Dense(DMatrix<f64>),
}

impl CoefficientPrior {
    pub fn size(&self) -> usize {
        match self {
            CoefficientPrior::Covariance(g) => g.size(),
            CoefficientPrior::Precision(q) => q.n_grid() + 1,
            CoefficientPrior::Dense(m) => m.nrows(),
        }
    }

    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        match self {
            CoefficientPrior::Covariance(g) => Ok(g.dense()),
            CoefficientPrior::Precision(q) => Ok(q.cholesky()?.inverse_dense()),
            CoefficientPrior::Dense(m) => Ok(m.clone()),
        }
    }

    /// Same prior as a dense covariance matrix.
    pub fn to_covariance_form(&self) -> Result<CoefficientPrior> {
        Ok(CoefficientPrior::Dense(self.covariance_dense()?))
    }
}

impl From<GridCovariance> for CoefficientPrior {
    fn from(g: GridCovariance) -> Self {
        CoefficientPrior::Covariance(g)
    }
}

impl From<PrecisionOperator> for CoefficientPrior {
    fn from(q: PrecisionOperator) -> Self {
        CoefficientPrior::Precision(q)
    }
}

#[derive(Debug, Clone)]
enum PosteriorFactor {
    /// `G = L L^T`, `I + L^T A L = R R^T`, so `G* = L (R R^T)^{-1} L^T`.
    Whitened { prior_l: DMatrix<f64>, inner_l: DMatrix<f64> },
    /// Cholesky of the posterior precision.
    Precision(BandCholesky),
}

/// `N(mu*, G*)` together with the pieces of the evidence.
#[derive(Debug, Clone)]
pub struct ConjugatePosterior {
    mean: Vec<f64>,
    factor: PosteriorFactor,
    log_det_ratio: f64,
    quad_form: f64,
    jitter: f64,
}

impl ConjugatePosterior {
    /// `mu*`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `log |G*| - log |G|`.
    pub fn log_det_ratio(&self) -> f64 {
        self.log_det_ratio
    }

    /// `mu*^T G*^{-1} mu*`.
    pub fn quad_form(&self) -> f64 {
        self.quad_form
    }

    /// Data factor of the evidence, `(log_det_ratio + quad_form) / 2`.
    pub fn log_evidence(&self) -> f64 {
        0.5 * (self.log_det_ratio + self.quad_form)
    }

    /// Relative jitter added to the prior covariance (0 for precision priors).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Exact draw from `N(mu*, G*)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.mean.len();
        match &self.factor {
            PosteriorFactor::Whitened { prior_l, inner_l } => {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let v = inner_l.tr_solve_lower_triangular(&z).expect("positive diagonal");
                let w = prior_l * v;
                self.mean.iter().zip(w.iter()).map(|(a, b)| a + b).collect()
            }
            PosteriorFactor::Precision(chol) => {
                let w = chol.sample_inverse(rng);
                self.mean.iter().zip(&w).map(|(a, b)| a + b).collect()
            }
        }
    }

    /// Dense `G*`.
    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.factor {
            PosteriorFactor::Whitened { prior_l, inner_l } => {
                let y = inner_l.solve_lower_triangular(&prior_l.transpose()).expect("positive diagonal");
                y.transpose() * y
            }
            PosteriorFactor::Precision(chol) => chol.inverse_dense(),
        }
    }
}

/// Coefficient posterior given `Phi`, `y` and the prior.
pub fn conjugate_update(
    design: &SparseDesign,
    y: &[f64],
    sigma_sq: f64,
    prior: &CoefficientPrior,
) -> Result<ConjugatePosterior> {
    if design.n_rows() != y.len() {
        return domain(format!("design has {} rows but y has {} entries", design.n_rows(), y.len()));
    }
    if design.n_cols() != prior.size() {
        return domain(format!("design has {} columns but prior has order {}", design.n_cols(), prior.size()));
    }
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return domain(format!("noise variance must be positive, got {sigma_sq}"));
    }
    let b: Vec<f64> = design.transpose_mul(y).into_iter().map(|v| v / sigma_sq).collect();
    match prior {
        CoefficientPrior::Precision(q) => precision_update(design, &b, sigma_sq, q.band()),
        CoefficientPrior::Covariance(g) => covariance_update(design, &b, sigma_sq, g.dense()),
        CoefficientPrior::Dense(g) => covariance_update(design, &b, sigma_sq, g.clone()),
    }
}

fn precision_update(design: &SparseDesign, b: &[f64], sigma_sq: f64, q: &SymBandMatrix) -> Result<ConjugatePosterior> {
    let prior_chol = q.cholesky()?;
    let gram = design.gram_banded(design.gram_bandwidth());
    let p = q.add_scaled(&gram, 1.0 / sigma_sq);
    let chol = p.cholesky().map_err(|e| Error::Conditioning(format!("posterior precision: {e}")))?;
    let mean = chol.solve(b);
    let quad_form = b.iter().zip(&mean).map(|(u, v)| u * v).sum();
    Ok(ConjugatePosterior {
        mean,
        log_det_ratio: prior_chol.log_det() - chol.log_det(),
        quad_form,
        factor: PosteriorFactor::Precision(chol),
        jitter: 0.0,
    })
}

fn covariance_update(design: &SparseDesign, b: &[f64], sigma_sq: f64, g: DMatrix<f64>) -> Result<ConjugatePosterior> {
    let m = g.nrows();
    let prior = factor_with_jitter(g)?;
    let l = prior.chol.l();
    // A L with A = Phi^T Phi / sigma^2 banded, so the data enter only through O(n 4^d) work
    let bw = design.gram_bandwidth();
    let a = design.gram_banded(bw);
    let mut al = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in j.saturating_sub(bw)..=(j + bw).min(m - 1) {
            let s = a.get(j, k) / sigma_sq;
            if s == 0.0 {
                continue;
            }
            // L is lower triangular: row k has entries in columns 0..=k
            for c in 0..=k {
                al[(j, c)] += s * l[(k, c)];
            }
        }
    }
    let mut inner = l.tr_mul(&al);
    for i in 0..m {
        inner[(i, i)] += 1.0;
    }
    inner = (&inner + inner.transpose()) * 0.5;
    let inner_l = nalgebra::Cholesky::new(inner)
        .ok_or_else(|| Error::Conditioning("I + L^T A L is not positive definite".into()))?
        .l();
    let v = l.tr_mul(&DVector::from_column_slice(b));
    let u = inner_l.solve_lower_triangular(&v).expect("positive diagonal");
    let quad_form = u.norm_squared();
    let mean = &l * inner_l.tr_solve_lower_triangular(&u).expect("positive diagonal");
    let log_det_inner = 2.0 * inner_l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(ConjugatePosterior {
        mean: mean.as_slice().to_vec(),
        log_det_ratio: -log_det_inner,
        quad_form,
        factor: PosteriorFactor::Whitened { prior_l: l, inner_l },
        jitter: prior.jitter,
    })
}

/// Data factor `(log|G*| - log|G| + mu*^T G*^{-1} mu*) / 2` and the posterior at `(N, kappa)`.
pub fn evaluate_state(
    n_grid: usize,
    kappa: f64,
    data: &Dataset,
    model: &PriorModel,
) -> Result<(f64, ConjugatePosterior)> {
    if model.dim() != data.dim() {
        return domain(format!("model dimension {} does not match data dimension {}", model.dim(), data.dim()));
    }
    let prior = model.build(n_grid, kappa)?;
    let design = data.design(n_grid)?;
    let post = conjugate_update(&design, data.y(), data.sigma_sq(), &prior)?;
    Ok((post.log_evidence(), post))
}

/// Unnormalized `log p(N, kappa | D)` up to an `(N, kappa)`-free constant.
pub fn log_marginal(n_grid: usize, kappa: f64, data: &Dataset, prior: &HyperPrior, model: &PriorModel) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return domain(format!("kappa must be positive, got {kappa}"));
    }
    let lp = prior.log_prior(n_grid, kappa);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + evaluate_state(n_grid, kappa, data, model)?.0)
}

/// Evidence evaluator with a per-chain cache keyed by `(N, kappa)`.
#[derive(Debug)]
pub struct EvidenceTarget<'a> {
    data: &'a Dataset,
    prior: &'a HyperPrior,
    model: &'a PriorModel,
    cache: HashMap<(usize, i64), f64>,
}

fn cache_key(n_grid: usize, kappa: f64) -> (usize, i64) {
    (n_grid, (kappa * 1e12).round() as i64)
}

impl<'a> EvidenceTarget<'a> {
    pub fn new(data: &'a Dataset, prior: &'a HyperPrior, model: &'a PriorModel) -> Self {
        Self { data, prior, model, cache: HashMap::new() }
    }

    pub fn prior(&self) -> &HyperPrior {
        self.prior
    }

    /// Data factor of the evidence; also returns the posterior when it had to be computed.
    pub fn log_likelihood(&mut self, n_grid: usize, kappa: f64) -> Result<(f64, Option<ConjugatePosterior>)> {
        let key = cache_key(n_grid, kappa);
        if let Some(&v) = self.cache.get(&key) {
            return Ok((v, None));
        }
        let (v, post) = evaluate_state(n_grid, kappa, self.data, self.model)?;
        if self.cache.len() >= CACHE_CAPACITY {
            self.cache.clear();
        }
        self.cache.insert(key, v);
        Ok((v, Some(post)))
    }

    pub fn posterior(&self, n_grid: usize, kappa: f64) -> Result<ConjugatePosterior> {
        Ok(evaluate_state(n_grid, kappa, self.data, self.model)?.1)
    }

    pub fn cached(&self) -> usize {
        self.cache.len()
    }
}

/// Current hyperparameters and their evidence terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperState {
    pub n_grid: usize,
    pub kappa: f64,
    pub log_prior: f64,
    pub log_likelihood: f64,
}

impl HyperState {
    pub fn log_posterior(&self) -> f64 {
        self.log_prior + self.log_likelihood
    }
}

#[derive(Debug, Clone)]
pub struct MhOutcome {
    pub state: HyperState,
    pub accepted: bool,
    /// The proposal's evidence could not be computed and it was rejected.
    pub numerical_failure: bool,
    /// Posterior at the new state, when the step computed it.
    pub posterior: Option<ConjugatePosterior>,
}

/// One independence Metropolis-Hastings transition with proposals from the prior.
///
/// Because proposals come from `p(N) p(kappa)`, the prior terms cancel
/// against the proposal density and the acceptance ratio is the ratio of
/// the data factors.
pub fn mh_step<R: Rng + ?Sized>(target: &mut EvidenceTarget<'_>, state: &HyperState, rng: &mut R) -> MhOutcome {
    let n_new = target.prior.sample_n(rng);
    let k_new = target.prior.kappa.sample(rng);
    let u: f64 = rng.random();
    let reject = |failed| MhOutcome { state: *state, accepted: false, numerical_failure: failed, posterior: None };
    if cache_key(n_new, k_new) == cache_key(state.n_grid, state.kappa) {
        return MhOutcome { state: *state, accepted: true, numerical_failure: false, posterior: None };
    }
    let (ll, posterior) = match target.log_likelihood(n_new, k_new) {
        Ok(v) => v,
        Err(_) => return reject(true),
    };
    if !ll.is_finite() {
        return reject(true);
    }
    let log_alpha = ll - state.log_likelihood;
    if u.ln() < log_alpha {
        let new = HyperState {
            n_grid: n_new,
            kappa: k_new,
            log_prior: target.prior.log_prior(n_new, k_new),
            log_likelihood: ll,
        };
        MhOutcome { state: new, accepted: true, numerical_failure: false, posterior }
    } else {
        reject(false)
    }
}

/// Chain lengths and starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burnin: usize,
    /// Starting `(N, kappa)`; defaults to the prior mode of `N` and the center of the kappa prior.
    #[serde(default)]
    pub init: Option<(usize, f64)>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { iters: 3500, burnin: 1000, init: None }
    }
}

/// One retained draw `(w, N, kappa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub n_grid: usize,
    pub kappa: f64,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub dim: usize,
    pub samples: Vec<ChainSample>,
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub numerical_failures: usize,
    pub seed: u64,
    pub burnin: usize,
    pub iters: usize,
}

/// Hierarchical sampler: MH on `(N, kappa)` then an exact draw of `w` from
/// its conjugate conditional, retained after `burnin` iterations.
pub fn run_sampler(
    data: &Dataset,
    prior: &HyperPrior,
    model: &PriorModel,
    config: &SamplerConfig,
    seed: u64,
) -> Result<ChainRecord> {
    if config.iters <= config.burnin {
        return domain(format!("iters ({}) must exceed burnin ({})", config.iters, config.burnin));
    }
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = EvidenceTarget::new(data, prior, model);
    let (n0, k0) = config.init.unwrap_or((prior.mode_n(), prior.kappa.center()));
    let abort = |iteration, n_grid, kappa, e: Error| Error::Sampler { iteration, n_grid, kappa, source: Box::new(e) };
    let (ll0, post0) = match target.log_likelihood(n0, k0) {
        Ok((ll, Some(p))) => (ll, p),
        Ok((ll, None)) => (ll, target.posterior(n0, k0).map_err(|e| abort(0, n0, k0, e))?),
        Err(e) => return Err(abort(0, n0, k0, e)),
    };
    let mut state = HyperState { n_grid: n0, kappa: k0, log_prior: prior.log_prior(n0, k0), log_likelihood: ll0 };
    let mut current = post0;
    let mut accepted = 0;
    let mut failures = 0;
    let mut samples = Vec::with_capacity(config.iters - config.burnin);
    for t in 0..config.iters {
        let out = mh_step(&mut target, &state, &mut rng);
        if out.numerical_failure {
            failures += 1;
        }
        if out.accepted {
            accepted += 1;
            if out.state.n_grid != state.n_grid || out.state.kappa != state.kappa {
                current = match out.posterior {
                    Some(p) => p,
                    None => target
                        .posterior(out.state.n_grid, out.state.kappa)
                        .map_err(|e| abort(t + 1, out.state.n_grid, out.state.kappa, e))?,
                };
            }
            state = out.state;
        }
        if t >= config.burnin {
            samples.push(ChainSample { n_grid: state.n_grid, kappa: state.kappa, coeffs: current.sample(&mut rng) });
        }
    }
    Ok(ChainRecord {
        dim: data.dim(),
        samples,
        acceptance_rate: accepted as f64 / config.iters as f64,
        accepted,
        numerical_failures: failures,
        seed,
        burnin: config.burnin,
        iters: config.iters,
    })
}

/// Pointwise posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    /// One value per requested level.
    pub quantiles: Vec<f64>,
}

fn check_query(query: &[f64], dim: usize) -> Result<()> {
    if !query.len().is_multiple_of(dim) {
        return domain(format!("{} query coordinates do not split into {dim}-vectors", query.len()));
    }
    if let Some(v) = query.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return domain(format!("query coordinate {v} outside [0, 1]"));
    }
    Ok(())
}

/// Evaluate every retained expansion at each query point and summarize.
pub fn posterior_predictive(chain: &ChainRecord, query: &[f64], levels: &[f64]) -> Result<Vec<PredictiveSummary>> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    check_query(query, chain.dim)?;
    if levels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return domain("quantile levels must lie in [0, 1]");
    }
    Ok(query
        .par_chunks(chain.dim)
        .map(|x| {
            let mut vals: Vec<f64> =
                chain.samples.iter().map(|s| eval_coeffs(&s.coeffs, s.n_grid, x)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.sort_by(f64::total_cmp);
            PredictiveSummary { mean, quantiles: levels.iter().map(|&p| quantile_sorted(&vals, p)).collect() }
        })
        .collect())
}

/// Posterior mean function at the query points.
pub fn posterior_mean(chain: &ChainRecord, query: &[f64]) -> Result<Vec<f64>> {
    if chain.samples.is_empty() {
        return Err(Error::EmptyChain);
    }
    check_query(query, chain.dim)?;
    let m = chain.samples.len() as f64;
    Ok(query
        .par_chunks(chain.dim)
        .map(|x| chain.samples.iter().map(|s| eval_coeffs(&s.coeffs, s.n_grid, x)).sum::<f64>() / m)
        .collect())
}

/// `p(N, kappa | D)` normalized over a product grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalScan {
    pub n_values: Vec<usize>,
    pub kappa_values: Vec<f64>,
    /// Unnormalized log values, row-major with `N` slowest.
    pub log_table: Vec<f64>,
    /// Normalized probabilities in the same layout.
    pub table: Vec<f64>,
    pub p_n: Vec<f64>,
    pub p_kappa: Vec<f64>,
    /// Grid cells whose evidence could not be computed (given zero mass).
    pub failures: usize,
}

impl MarginalScan {
    pub fn prob(&self, i_n: usize, i_kappa: usize) -> f64 {
        self.table[i_n * self.kappa_values.len() + i_kappa]
    }

    pub fn modal_n(&self) -> usize {
        self.n_values[argmax(&self.p_n)]
    }

    pub fn modal_kappa(&self) -> f64 {
        self.kappa_values[argmax(&self.p_kappa)]
    }
}

/// Evaluate the unnormalized posterior on `n_values x kappa_values` and normalize.
pub fn marginal_scan(
    data: &Dataset,
    prior: &HyperPrior,
    model: &PriorModel,
    n_values: &[usize],
    kappa_values: &[f64],
) -> Result<MarginalScan> {
    if n_values.is_empty() || kappa_values.is_empty() {
        return domain("scan grids must be non-empty");
    }
    let cells: Vec<(usize, f64)> =
        n_values.iter().flat_map(|&n| kappa_values.iter().map(move |&k| (n, k))).collect();
    let evals: Vec<Result<f64>> =
        cells.par_iter().map(|&(n, k)| log_marginal(n, k, data, prior, model)).collect();
    let mut failures = 0;
    let mut log_table = Vec::with_capacity(cells.len());
    for e in evals {
        match e {
            Ok(v) => log_table.push(v),
            Err(e) if e.is_numerical() => {
                failures += 1;
                log_table.push(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    let z = log_sum_exp(&log_table);
    if !z.is_finite() {
        return domain("no grid cell has positive posterior mass");
    }
    let table: Vec<f64> = log_table.iter().map(|v| (v - z).exp()).collect();
    let nk = kappa_values.len();
    let p_n = (0..n_values.len()).map(|i| table[i * nk..(i + 1) * nk].iter().sum()).collect();
    let p_kappa = (0..nk).map(|j| (0..n_values.len()).map(|i| table[i * nk + j]).sum()).collect();
    Ok(MarginalScan {
        n_values: n_values.to_vec(),
        kappa_values: kappa_values.to_vec(),
        log_table,
        table,
        p_n,
        p_kappa,
        failures,
    })
}

/// Number of coefficients a model uses at grid size `n_grid`.
pub fn model_size(model: &PriorModel, n_grid: usize) -> usize {
    n_coeffs(n_grid, model.dim())
}
