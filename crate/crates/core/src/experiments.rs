//! Simulation studies: test functions, data generation, AMSE, replication
//! runs, marginal scans across sample sizes and timing benchmarks.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::grid_points;
use crate::error::{domain, Error, Result};
use crate::exact_gp::{gp_kappa_mh, GpFit, ScaledKernel};
use crate::inference::{
    marginal_scan, posterior_mean, posterior_predictive, run_sampler, ChainRecord, Dataset, HyperPrior,
    KappaPrior, MarginalScan, PredictiveSummary, PriorModel, SamplerConfig, VarianceScale,
};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::seeding::{derive_seed, rng_for, CHAIN_STREAM, DATA_STREAM};
use crate::stats::{linear_fit, median, quantile_sorted, variance};

pub const SCHEMA_VERSION: u32 = 1;

/// Test functions on `[0, 1]` (`F1`, `F2`) and `[0, 1]^2` (`F3`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionId {
    F1,
    F2,
    F3,
}

const F1_TERMS: usize = 500;

fn f1_coeffs() -> &'static [f64] {
    static C: OnceLock<Vec<f64>> = OnceLock::new();
    C.get_or_init(|| {
        (1..=F1_TERMS)
            .map(|j| {
                let j = j as f64;
                std::f64::consts::SQRT_2 * j.sin() * j.powf(-1.4)
            })
            .collect()
    })
}

impl FunctionId {
    pub fn dim(self) -> usize {
        match self {
            FunctionId::F1 | FunctionId::F2 => 1,
            FunctionId::F3 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionId::F1 => "f1",
            FunctionId::F2 => "f2",
            FunctionId::F3 => "f3",
        }
    }

    /// Evaluates without checking the point; see [`true_function`].
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            FunctionId::F1 => {
                let t = x[0];
                f1_coeffs()
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * (std::f64::consts::PI * (i as f64 + 0.5) * t).cos())
                    .sum()
            }
            FunctionId::F2 => 128.0 * (0.5 - x[0]).abs().powi(7) + x[0] * x[0],
            FunctionId::F3 => (5.0 * x[0] + 2.0 * x[1]).sin() + 2.0 * x[1] * x[1],
        }
    }
}

pub fn true_function(id: FunctionId, x: &[f64]) -> Result<f64> {
    if x.len() != id.dim() {
        return domain(format!("{} takes {}-dimensional input, got {}", id.name(), id.dim(), x.len()));
    }
    if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return domain(format!("coordinate {v} outside [0, 1]"));
    }
    Ok(id.eval(x))
}

/// Uniform design on `[0, 1]^d` with Gaussian noise of variance `sigma_sq`.
pub fn generate_data<R: Rng + ?Sized>(id: FunctionId, n: usize, sigma_sq: f64, rng: &mut R) -> Result<Dataset> {
    let d = id.dim();
    let x: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
    let sd = sigma_sq.sqrt();
    let y = x.chunks_exact(d).map(|p| id.eval(p) + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::new(x, y, sigma_sq, d)
}

/// Mean squared difference of two functions over the `(K+1)^d` grid.
pub fn amse<F, G>(f_true: F, f_hat: G, k: usize, dim: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    if k == 0 || dim == 0 {
        return domain("AMSE grid needs K >= 1 and d >= 1");
    }
    let grid = grid_points(k, dim);
    let truth: Vec<f64> = grid.chunks_exact(dim).map(&f_true).collect();
    let est: Vec<f64> = grid.chunks_exact(dim).map(&f_hat).collect();
    Ok(amse_values(&truth, &est))
}

/// AMSE from values already evaluated on the same grid.
pub fn amse_values(truth: &[f64], est: &[f64]) -> f64 {
    assert_eq!(truth.len(), est.len());
    truth.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gpi,
    Spde,
    ExactGp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gpi => "gpi",
            Method::Spde => "spde",
            Method::ExactGp => "exact_gp",
        }
    }
}

/// Product grid for `marginal_scan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGrid {
    pub n_values: Vec<usize>,
    pub kappa_values: Vec<f64>,
}

/// Timing study settings; the model settings come from the enclosing config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    pub methods: Vec<Method>,
    pub n_values: Vec<usize>,
    /// Posterior samples are evaluated on the `(K+1)^d` grid.
    pub query_grid: usize,
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Fixed grid size for the finite-rank methods.
    pub n_grid: usize,
    /// Chain length per finite-rank run.
    pub iters: usize,
    #[serde(default = "default_batch")]
    pub samples: usize,
    /// Fixed kappa for the exact GP.
    pub gp_kappa: f64,
}

fn default_warmup() -> usize {
    1
}

fn default_batch() -> usize {
    10
}

fn default_sigma_sq() -> f64 {
    0.01
}

fn default_iters() -> usize {
    3500
}

fn default_burnin() -> usize {
    1000
}

fn default_reps() -> usize {
    10
}

fn default_variance() -> VarianceScale {
    VarianceScale::Unit
}

fn default_family() -> KernelFamily {
    KernelFamily::Matern
}

/// One experiment: a test function, a sample size, a method and its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub function: FunctionId,
    pub n: usize,
    /// Must match the function when given.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_sigma_sq")]
    pub sigma_sq: f64,
    pub method: Method,
    /// Hyperprior of the finite-rank methods; the exact GP uses only its kappa part.
    #[serde(default)]
    pub prior: Option<HyperPrior>,
    #[serde(default = "default_family")]
    pub family: KernelFamily,
    /// Matérn smoothness for `gpi` and `exact_gp`.
    #[serde(default)]
    pub nu: Option<f64>,
    /// SPDE order (even).
    #[serde(default)]
    pub beta: Option<u32>,
    /// Replaces the kappa prior by a point mass.
    #[serde(default)]
    pub kappa_fixed: Option<f64>,
    #[serde(default = "default_variance")]
    pub variance: VarianceScale,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    /// AMSE grid resolution `K`; 200 in one dimension and 40 in two by default.
    #[serde(default)]
    pub amse_grid: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scan: Option<ScanGrid>,
    #[serde(default)]
    pub timing: Option<TimingConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.function.dim()
    }

    pub fn amse_k(&self) -> usize {
        self.amse_grid.unwrap_or(if self.dim() == 1 { 200 } else { 40 })
    }

    /// Switches desk defaults to 50 replications and `K = 1000` (one dimension).
    pub fn full_scale(mut self) -> Self {
        self.replications = 50;
        if self.dim() == 1 {
            self.amse_grid = Some(1000);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if let Some(d) = self.dim {
            if d != self.function.dim() {
                return bad(format!("{} is {}-dimensional but dim = {d}", self.function.name(), self.function.dim()));
            }
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return bad(format!("sigma_sq must be positive, got {}", self.sigma_sq));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.amse_grid == Some(0) {
            return bad("amse_grid must be at least 1".into());
        }
        if let Some(k) = self.kappa_fixed {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("kappa_fixed must be positive, got {k}"));
            }
        }
        if self.method != Method::Spde && self.family == KernelFamily::Matern {
            match self.nu {
                Some(nu) if nu > 0.0 && nu.is_finite() => {}
                _ => return bad("Matérn methods need nu > 0".into()),
            }
        }
        match self.method {
            Method::Spde => {
                if self.dim() != 1 {
                    return bad("the SPDE prior is one-dimensional".into());
                }
                match self.beta {
                    Some(b) if b >= 2 && b % 2 == 0 => {}
                    _ => return bad("SPDE needs an even beta >= 2".into()),
                }
            }
            Method::Gpi | Method::ExactGp => {
                if self.beta.is_some() {
                    return bad(format!("beta is only used by spde, not {}", self.method.name()));
                }
            }
        }
        match (&self.prior, self.method) {
            (Some(p), _) => p.validate().map_err(|e| Error::Config(e.to_string()))?,
            (None, Method::ExactGp) if self.kappa_fixed.is_some() => {}
            (None, _) => return bad(format!("{} needs a prior", self.method.name())),
        }
        if self.iters <= self.burnin {
            return bad(format!("iters ({}) must exceed burnin ({})", self.iters, self.burnin));
        }
        if let Some(s) = &self.scan {
            if s.n_values.is_empty() || s.kappa_values.is_empty() {
                return bad("scan grids must be non-empty".into());
            }
            if s.n_values.contains(&0) || s.kappa_values.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                return bad("scan grids need positive N and kappa".into());
            }
        }
        if let Some(t) = &self.timing {
            if t.methods.is_empty() || t.n_values.is_empty() || t.reps == 0 {
                return bad("timing needs methods, n_values and reps >= 1".into());
            }
            if t.samples == 0 || t.iters <= t.samples || t.n_grid == 0 || t.query_grid == 0 {
                return bad("timing needs n_grid, query_grid >= 1 and iters > samples >= 1".into());
            }
            if t.methods.contains(&Method::Spde) && (self.dim() != 1 || self.beta.is_none()) {
                return bad("spde timing needs a one-dimensional function and beta".into());
            }
            if !(t.gp_kappa > 0.0 && t.gp_kappa.is_finite()) {
                return bad("gp_kappa must be positive".into());
            }
        }
        Ok(())
    }

    /// Hyperprior with `kappa_fixed` applied.
    pub fn hyper_prior(&self) -> Result<HyperPrior> {
        let base = self.prior.clone().ok_or_else(|| Error::Config("no prior configured".into()))?;
        Ok(match self.kappa_fixed {
            Some(k) => HyperPrior { kappa: KappaPrior::PointMass { value: k }, ..base },
            None => base,
        })
    }

    pub fn prior_model(&self, method: Method) -> Result<PriorModel> {
        match method {
            Method::Gpi => Ok(PriorModel::Gpi { family: self.family, nu: self.nu, dim: self.dim(), variance: self.variance }),
            Method::Spde => Ok(PriorModel::Spde {
                beta: self.beta.ok_or_else(|| Error::Config("spde needs beta".into()))?,
                variance: self.variance,
            }),
            Method::ExactGp => Err(Error::Config("the exact GP has no coefficient prior".into())),
        }
    }

    /// Kernel of the exact GP (kappa set to `kappa`).
    pub fn gp_kernel(&self, kappa: f64) -> Result<KernelSpec> {
        match self.family {
            KernelFamily::Matern => {
                KernelSpec::matern(kappa, self.nu.ok_or_else(|| Error::Config("Matérn needs nu".into()))?, self.dim())
            }
            KernelFamily::SquaredExponential => KernelSpec::squared_exponential(kappa, self.dim()),
        }
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }

    pub fn simulate(&self, rep: usize) -> Result<Dataset> {
        let mut rng = rng_for(self.replication_seed(rep), DATA_STREAM);
        generate_data(self.function, self.n, self.sigma_sq, &mut rng)
    }
}

fn base(function: FunctionId, n: usize, method: Method) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        function,
        n,
        dim: None,
        sigma_sq: 0.01,
        method,
        prior: None,
        family: KernelFamily::Matern,
        nu: None,
        beta: None,
        kappa_fixed: None,
        variance: VarianceScale::Unit,
        iters: 3500,
        burnin: 1000,
        replications: 10,
        amse_grid: None,
        seed: 20240101,
        scan: None,
        timing: None,
    }
}

/// `N` prior of the one-dimensional studies: support {4, 8, 12, 20, 30}, `p(N) ∝ exp(-rate N)`.
pub fn one_dim_prior(rate: f64) -> HyperPrior {
    HyperPrior::exp_decay(vec![4, 8, 12, 20, 30], rate, KappaPrior::Gamma { shape: 3.0, scale: 3.0 })
        .expect("valid preset")
}

/// Prior of the two-dimensional study: uniform on {6, 8, 10, 14, 18}, kappa ~ Gamma(5, scale 5).
pub fn two_dim_prior() -> HyperPrior {
    HyperPrior::uniform(vec![6, 8, 10, 14, 18], KappaPrior::Gamma { shape: 5.0, scale: 5.0 }).expect("valid preset")
}

pub const PRESET_SIZES: [usize; 3] = [200, 500, 1000];

/// Every shipped preset name.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for (m, fs) in [("gpi", &["f1", "f2", "f3"][..]), ("spde", &["f1", "f2"][..]), ("exact", &["f1", "f2", "f3"][..])] {
        for f in fs {
            for n in PRESET_SIZES {
                out.push(format!("{m}-{f}-n{n}"));
                if *f == "f1" && m != "exact" {
                    out.push(format!("{m}-{f}-n{n}-slow-decay"));
                }
            }
        }
    }
    out.push("timing-f1".into());
    out.push("timing-f3".into());
    out
}

/// Named configurations.
///
/// `{gpi,spde,exact}-{f1,f2,f3}-n{n}` use the published priors verbatim; the
/// `-slow-decay` variants replace `exp(-4N)` by `exp(-N/4)` for sensitivity
/// runs. `timing-f1` and `timing-f3` carry a timing section.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let unknown = || Error::Config(format!("unknown preset '{name}' (known: {})", preset_names().join(", ")));
    if let Some(f) = name.strip_prefix("timing-") {
        let function = match f {
            "f1" => FunctionId::F1,
            "f3" => FunctionId::F3,
            _ => return Err(unknown()),
        };
        let mut c = if function == FunctionId::F1 {
            let mut c = base(function, 1000, Method::Gpi);
            c.prior = Some(one_dim_prior(4.0));
            c.nu = Some(1.5);
            c.timing = Some(TimingConfig {
                methods: vec![Method::Gpi, Method::ExactGp],
                n_values: vec![500, 1000, 2000, 4000],
                query_grid: 40,
                reps: 3,
                warmup: 1,
                n_grid: 12,
                iters: 60,
                samples: 10,
                gp_kappa: 10.0,
            });
            c
        } else {
            let mut c = base(function, 1000, Method::Gpi);
            c.prior = Some(two_dim_prior());
            c.nu = Some(1.5);
            c.timing = Some(TimingConfig {
                methods: vec![Method::Gpi, Method::ExactGp],
                n_values: vec![250, 500, 1000, 2000],
                query_grid: 40,
                reps: 3,
                warmup: 1,
                n_grid: 10,
                iters: 60,
                samples: 10,
                gp_kappa: 1.0,
            });
            c
        };
        c.replications = 1;
        return Ok(c);
    }
    let parts: Vec<&str> = name.splitn(4, '-').collect();
    if parts.len() < 3 {
        return Err(unknown());
    }
    let method = match parts[0] {
        "gpi" => Method::Gpi,
        "spde" => Method::Spde,
        "exact" => Method::ExactGp,
        _ => return Err(unknown()),
    };
    let function = match parts[1] {
        "f1" => FunctionId::F1,
        "f2" => FunctionId::F2,
        "f3" => FunctionId::F3,
        _ => return Err(unknown()),
    };
    let n: usize = parts[2].strip_prefix('n').and_then(|s| s.parse().ok()).ok_or_else(unknown)?;
    let slow = match parts.get(3) {
        None => false,
        Some(&"slow-decay") if function == FunctionId::F1 && method != Method::ExactGp => true,
        Some(_) => return Err(unknown()),
    };
    let mut c = base(function, n, method);
    let rate = if slow { 0.25 } else { 4.0 };
    match (method, function) {
        (Method::Gpi, FunctionId::F3) => {
            c.prior = Some(two_dim_prior());
            c.nu = Some(1.5);
        }
        (Method::Gpi, _) => {
            c.prior = Some(one_dim_prior(rate));
            c.nu = Some(1.5);
        }
        (Method::Spde, FunctionId::F3) => return Err(unknown()),
        (Method::Spde, f) => {
            c.prior = Some(one_dim_prior(rate));
            c.beta = Some(2);
            if f == FunctionId::F2 {
                c.kappa_fixed = Some(10.0);
            }
        }
        (Method::ExactGp, FunctionId::F1) => {
            c.nu = Some(1.5);
            c.kappa_fixed = Some(10.0);
        }
        (Method::ExactGp, FunctionId::F2) => {
            c.nu = Some(7.0);
            c.kappa_fixed = Some(10.0);
        }
        (Method::ExactGp, FunctionId::F3) => {
            c.nu = Some(1.5);
            c.kappa_fixed = Some(1.0);
        }
    }
    if let (Some(p), Method::Gpi | Method::Spde) = (&c.prior, method) {
        let kappas: Vec<f64> = if function == FunctionId::F3 {
            (1..=40).map(|i| 0.5 * i as f64).collect()
        } else {
            (1..=40).map(|i| i as f64).collect()
        };
        c.scan = Some(ScanGrid {
            n_values: p.n_support.clone(),
            kappa_values: c.kappa_fixed.map_or(kappas, |k| vec![k]),
        });
    }
    c.validate()?;
    Ok(c)
}

/// A fitted posterior, either a hyperparameter chain or exact GP fits.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Chain(ChainRecord),
    /// Exact GP fits with their mixture weights (one per distinct kappa).
    Gp { fits: Vec<(GpFit, f64)>, acceptance_rate: f64, mean_kappa: f64 },
}

impl FittedModel {
    pub fn posterior_mean(&self, query: &[f64]) -> Result<Vec<f64>> {
        match self {
            FittedModel::Chain(c) => posterior_mean(c, query),
            FittedModel::Gp { fits, .. } => {
                let mut out = vec![0.0; query.len() / fits[0].0.kernel().spec.dim];
                for (fit, w) in fits {
                    for (o, m) in out.iter_mut().zip(fit.predict_mean(query)?) {
                        *o += w * m;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Pointwise mean and quantiles. For the exact GP the mixture quantiles
    /// are taken from `draws` marginal samples per point.
    pub fn predictive(&self, query: &[f64], levels: &[f64], draws: usize, seed: u64) -> Result<Vec<PredictiveSummary>> {
        match self {
            FittedModel::Chain(c) => posterior_predictive(c, query, levels),
            FittedModel::Gp { fits, .. } => {
                let preds: Vec<_> = fits.iter().map(|(f, _)| f.predict(query)).collect::<Result<_>>()?;
                let counts: Vec<usize> = fits.iter().map(|(_, w)| ((w * draws as f64).round() as usize).max(1)).collect();
                let points = preds[0].len();
                Ok((0..points)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = rng_for(seed, i as u64);
                        let mean = fits.iter().zip(&preds).map(|((_, w), p)| w * p[i].mean).sum();
                        let mut vals = Vec::new();
                        for (p, &c) in preds.iter().zip(&counts) {
                            let sd = p[i].variance.max(0.0).sqrt();
                            vals.extend((0..c).map(|_| p[i].mean + sd * rng.sample::<f64, _>(StandardNormal)));
                        }
                        vals.sort_by(f64::total_cmp);
                        PredictiveSummary { mean, quantiles: levels.iter().map(|&l| quantile_sorted(&vals, l)).collect() }
                    })
                    .collect())
            }
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        match self {
            FittedModel::Chain(c) => c.acceptance_rate,
            FittedModel::Gp { acceptance_rate, .. } => *acceptance_rate,
        }
    }

    pub fn numerical_failures(&self) -> usize {
        match self {
            FittedModel::Chain(c) => c.numerical_failures,
            FittedModel::Gp { .. } => 0,
        }
    }

    /// Most frequent `N` among retained draws (smallest on ties).
    pub fn mode_n(&self) -> Option<usize> {
        match self {
            FittedModel::Chain(c) => {
                let mut counts = std::collections::BTreeMap::new();
                for s in &c.samples {
                    *counts.entry(s.n_grid).or_insert(0usize) += 1;
                }
                counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(n, _)| *n)
            }
            FittedModel::Gp { .. } => None,
        }
    }

    pub fn mean_kappa(&self) -> f64 {
        match self {
            FittedModel::Chain(c) => c.samples.iter().map(|s| s.kappa).sum::<f64>() / c.samples.len().max(1) as f64,
            FittedModel::Gp { mean_kappa, .. } => *mean_kappa,
        }
    }
}

/// Runs the configured method on `data` with the sampler driven by `seed`.
pub fn fit_model(config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<FittedModel> {
    match config.method {
        Method::Gpi | Method::Spde => {
            let prior = config.hyper_prior()?;
            let model = config.prior_model(config.method)?;
            let sampler = SamplerConfig { iters: config.iters, burnin: config.burnin, init: None };
            Ok(FittedModel::Chain(run_sampler(data, &prior, &model, &sampler, seed)?))
        }
        Method::ExactGp => {
            let (kappas, acceptance_rate) = match config.kappa_fixed {
                Some(k) => (vec![k], 1.0),
                None => {
                    let kp = config.prior.as_ref().map(|p| p.kappa.clone()).ok_or_else(|| Error::Config("no kappa prior".into()))?;
                    let template = config.gp_kernel(kp.center())?;
                    let chain = gp_kappa_mh(data, &template, config.variance, &kp, config.iters, config.burnin, seed)?;
                    (chain.kappas, chain.acceptance_rate)
                }
            };
            let mean_kappa = kappas.iter().sum::<f64>() / kappas.len() as f64;
            let mut distinct: Vec<(f64, usize)> = Vec::new();
            for k in &kappas {
                match distinct.iter_mut().find(|(v, _)| v == k) {
                    Some(e) => e.1 += 1,
                    None => distinct.push((*k, 1)),
                }
            }
            let total = kappas.len() as f64;
            let fits = distinct
                .iter()
                .map(|&(k, c)| {
                    let kernel = ScaledKernel::new(config.gp_kernel(k)?, config.variance)?;
                    Ok((GpFit::new(data, kernel)?, c as f64 / total))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FittedModel::Gp { fits, acceptance_rate, mean_kappa })
        }
    }
}

/// One row of a replication table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub seed: u64,
    pub n: usize,
    pub amse: f64,
    pub acceptance_rate: f64,
    pub mode_n: Option<usize>,
    pub mean_kappa: f64,
    pub numerical_failures: usize,
    /// `ok`, or the error that stopped this replication.
    pub status: String,
    /// Excluded from the CSV so that tables are byte-reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl ReplicationRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Fits replication `rep` and scores it.
pub fn run_replication(config: &ExperimentConfig, rep: usize) -> ReplicationRow {
    let seed = config.replication_seed(rep);
    let start = Instant::now();
    let outcome = (|| -> Result<(f64, FittedModel)> {
        let data = config.simulate(rep)?;
        let fit = fit_model(config, &data, derive_seed(seed, CHAIN_STREAM))?;
        let grid = grid_points(config.amse_k(), config.dim());
        let est = fit.posterior_mean(&grid)?;
        let truth: Vec<f64> = grid.chunks_exact(config.dim()).map(|p| config.function.eval(p)).collect();
        Ok((amse_values(&truth, &est), fit))
    })();
    let wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((amse, fit)) => ReplicationRow {
            replication: rep,
            seed,
            n: config.n,
            amse,
            acceptance_rate: fit.acceptance_rate(),
            mode_n: fit.mode_n(),
            mean_kappa: fit.mean_kappa(),
            numerical_failures: fit.numerical_failures(),
            status: "ok".into(),
            wall_seconds,
        },
        Err(e) => ReplicationRow {
            replication: rep,
            seed,
            n: config.n,
            amse: f64::NAN,
            acceptance_rate: f64::NAN,
            mode_n: None,
            mean_kappa: f64::NAN,
            numerical_failures: 0,
            status: format!("error: {e}"),
            wall_seconds,
        },
    }
}

/// All replications, run concurrently and returned in replication order.
pub fn run_replications(config: &ExperimentConfig) -> Result<Vec<ReplicationRow>> {
    config.validate()?;
    Ok((0..config.replications).into_par_iter().map(|r| run_replication(config, r)).collect())
}

/// Median AMSE over successful replications (`NaN` if none succeeded).
pub fn median_amse(rows: &[ReplicationRow]) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.is_ok()).map(|r| r.amse).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        median(&v)
    }
}

/// Replication tables of `base` at each sample size (same seeds otherwise).
pub fn amse_by_n(base: &ExperimentConfig, n_values: &[usize]) -> Result<Vec<(usize, Vec<ReplicationRow>)>> {
    n_values
        .iter()
        .map(|&n| {
            let c = ExperimentConfig { n, ..base.clone() };
            Ok((n, run_replications(&c)?))
        })
        .collect()
}

/// `p(N, kappa | D)` for one simulated data set (replication `rep`).
pub fn scan_replication(config: &ExperimentConfig, rep: usize) -> Result<MarginalScan> {
    config.validate()?;
    let grid = config.scan.clone().ok_or_else(|| Error::Config("config has no scan grid".into()))?;
    let prior = config.hyper_prior()?;
    let model = config.prior_model(config.method)?;
    let data = config.simulate(rep)?;
    marginal_scan(&data, &prior, &model, &grid.n_values, &grid.kappa_values)
}

/// Median log-AMSE of the SPDE prior and of the exact GP at each fixed kappa.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub kappa: f64,
    pub spde_median_log_amse: f64,
    pub gp_median_log_amse: f64,
}

/// SPDE versus exact Matérn GP on the same data sets at each kappa.
pub fn spde_vs_matern(spde: &ExperimentConfig, gp: &ExperimentConfig, kappas: &[f64]) -> Result<Vec<ComparisonRow>> {
    let log_median = |rows: &[ReplicationRow]| {
        let v: Vec<f64> = rows.iter().filter(|r| r.is_ok()).map(|r| r.amse.ln()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            median(&v)
        }
    };
    kappas
        .iter()
        .map(|&k| {
            let s = run_replications(&ExperimentConfig { kappa_fixed: Some(k), ..spde.clone() })?;
            let g = run_replications(&ExperimentConfig { kappa_fixed: Some(k), ..gp.clone() })?;
            Ok(ComparisonRow { kappa: k, spde_median_log_amse: log_median(&s), gp_median_log_amse: log_median(&g) })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: Method,
    pub n: usize,
    pub rep: usize,
    /// Wall time to produce one batch of posterior samples on the query grid.
    pub seconds: f64,
    /// Sampler time per MH iteration (equal to `seconds` for the exact GP).
    pub per_iteration_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub method: Method,
    pub n: usize,
    pub median_seconds: f64,
    pub std_seconds: f64,
    pub median_per_iteration: f64,
    pub std_per_iteration: f64,
    /// Standard deviation below half the median.
    pub stable: bool,
}

fn time_once(config: &ExperimentConfig, t: &TimingConfig, method: Method, n: usize, seed: u64) -> Result<(f64, f64)> {
    let c = ExperimentConfig { n, ..config.clone() };
    let mut rng = rng_for(seed, DATA_STREAM);
    let data = generate_data(c.function, n, c.sigma_sq, &mut rng)?;
    let query = grid_points(t.query_grid, c.dim());
    match method {
        Method::Gpi | Method::Spde => {
            let base = c.prior.clone().ok_or_else(|| Error::Config("timing needs a prior".into()))?;
            let prior = HyperPrior::new(vec![t.n_grid], vec![0.0], base.kappa)?;
            let model = c.prior_model(method)?;
            let sampler = SamplerConfig { iters: t.iters, burnin: t.iters - t.samples, init: None };
            let start = Instant::now();
            let chain = run_sampler(&data, &prior, &model, &sampler, derive_seed(seed, CHAIN_STREAM))?;
            let sampler_time = start.elapsed().as_secs_f64();
            let evals: Vec<Vec<f64>> = chain
                .samples
                .iter()
                .map(|s| {
                    let one = ChainRecord { samples: vec![s.clone()], ..chain.clone() };
                    posterior_mean(&one, &query)
                })
                .collect::<Result<_>>()?;
            std::hint::black_box(&evals);
            Ok((start.elapsed().as_secs_f64(), sampler_time / t.iters as f64))
        }
        Method::ExactGp => {
            let start = Instant::now();
            let kernel = ScaledKernel::new(c.gp_kernel(t.gp_kappa)?, c.variance)?;
            let fit = GpFit::new(&data, kernel)?;
            let mut rng = rng_for(seed, CHAIN_STREAM);
            let draws = fit.sample_joint(&query, t.samples, &mut rng)?;
            std::hint::black_box(&draws);
            let s = start.elapsed().as_secs_f64();
            Ok((s, s))
        }
    }
}

/// Wall-clock cost of a posterior-sample batch per method and sample size.
/// Runs sequentially; the first `warmup` runs of each cell are discarded.
pub fn timing_benchmark(config: &ExperimentConfig) -> Result<Vec<TimingRow>> {
    config.validate()?;
    let t = config.timing.clone().ok_or_else(|| Error::Config("config has no timing section".into()))?;
    let mut rows = Vec::new();
    for &method in &t.methods {
        for &n in &t.n_values {
            for rep in 0..t.warmup + t.reps {
                let seed = derive_seed(config.seed, rep as u64);
                let (seconds, per_iteration_seconds) = time_once(config, &t, method, n, seed)?;
                if rep >= t.warmup {
                    rows.push(TimingRow { method, n, rep: rep - t.warmup, seconds, per_iteration_seconds });
                }
            }
        }
    }
    Ok(rows)
}

pub fn summarize_timing(rows: &[TimingRow]) -> Vec<TimingSummary> {
    let mut keys: Vec<(Method, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.n)) {
            keys.push((r.method, r.n));
        }
    }
    keys.into_iter()
        .map(|(method, n)| {
            let cell: Vec<&TimingRow> = rows.iter().filter(|r| r.method == method && r.n == n).collect();
            let s: Vec<f64> = cell.iter().map(|r| r.seconds).collect();
            let p: Vec<f64> = cell.iter().map(|r| r.per_iteration_seconds).collect();
            let sd = |v: &[f64]| if v.len() > 1 { variance(v).sqrt() } else { 0.0 };
            let (ms, mp) = (median(&s), median(&p));
            let (ss, sp) = (sd(&s), sd(&p));
            TimingSummary {
                method,
                n,
                median_seconds: ms,
                std_seconds: ss,
                median_per_iteration: mp,
                std_per_iteration: sp,
                stable: ss < 0.5 * ms && sp < 0.5 * mp,
            }
        })
        .collect()
}

/// Slope of `log t` against `log n`.
pub fn loglog_slope(ns: &[usize], times: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    linear_fit(&x, &y).slope
}

/// `R^2` of an affine fit of `times` on `n`.
pub fn affine_r_squared(ns: &[usize], times: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    linear_fit(&x, times).r_squared
}

/// Caps the global rayon pool at `FRGP_THREADS` workers when set; returns the
/// pool size in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var("FRGP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("FRGP_THREADS must be a positive integer, got '{v}'")))?;
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Writes `rows` as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
