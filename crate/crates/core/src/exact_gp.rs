//! Unapproximated GP regression: dense `O(n^3)` conditioning on the data.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::gpi::{factor_with_jitter, CovarianceFactor};
use crate::inference::{Dataset, KappaPrior, VarianceScale};
use crate::kernels::KernelSpec;

/// A kernel with the variance convention applied on top of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledKernel {
    pub spec: KernelSpec,
    pub scale: f64,
}

impl ScaledKernel {
    pub fn new(spec: KernelSpec, variance: VarianceScale) -> Result<Self> {
        spec.validate()?;
        let scale = match variance {
            VarianceScale::Verbatim => 1.0,
            VarianceScale::Unit => 1.0 / spec.variance(),
        };
        Ok(Self { spec, scale })
    }

    pub fn with_kappa(&self, kappa: f64, variance: VarianceScale) -> Result<Self> {
        Self::new(self.spec.with_kappa(kappa)?, variance)
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let t = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        self.scale * self.spec.cov(t).expect("validated kernel")
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.spec.cov(0.0).expect("validated kernel")
    }
}

impl From<KernelSpec> for ScaledKernel {
    fn from(spec: KernelSpec) -> Self {
        Self { spec, scale: 1.0 }
    }
}

/// Gram matrix between two point sets (row-major, dimension `dim`).
fn cross_cov(kernel: &ScaledKernel, a: &[f64], b: &[f64], dim: usize) -> DMatrix<f64> {
    let (na, nb) = (a.len() / dim, b.len() / dim);
    let rows: Vec<Vec<f64>> = (0..na)
        .into_par_iter()
        .map(|i| (0..nb).map(|j| kernel.eval(&a[i * dim..(i + 1) * dim], &b[j * dim..(j + 1) * dim])).collect())
        .collect();
    DMatrix::from_fn(na, nb, |i, j| rows[i][j])
}

/// Symmetric Gram matrix of one point set, computing each pair once.
fn gram(kernel: &ScaledKernel, x: &[f64], dim: usize) -> DMatrix<f64> {
    let n = x.len() / dim;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..=i).map(|j| kernel.eval(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim])).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| if j <= i { rows[i][j] } else { rows[j][i] })
}

/// A fitted GP: Cholesky of `K(X, X) + sigma^2 I` and `alpha = (K + sigma^2 I)^{-1} y`.
#[derive(Debug, Clone)]
pub struct GpFit {
    kernel: ScaledKernel,
    train: Dataset,
    factor: CovarianceFactor,
    alpha: DVector<f64>,
}

/// Per-point predictive moments of the latent function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GpPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl GpFit {
    pub fn new(data: &Dataset, kernel: impl Into<ScaledKernel>) -> Result<Self> {
        let kernel = kernel.into();
        kernel.spec.validate()?;
        if kernel.spec.dim != data.dim() {
            return domain(format!("kernel dimension {} does not match data dimension {}", kernel.spec.dim, data.dim()));
        }
        if data.is_empty() {
            return domain("GP regression needs at least one observation");
        }
        let mut k = gram(&kernel, data.x(), data.dim());
        for i in 0..data.len() {
            k[(i, i)] += data.sigma_sq();
        }
        let factor = factor_with_jitter(k).map_err(|e| Error::Conditioning(format!("K + sigma^2 I: {e}")))?;
        let alpha = factor.chol.solve(&DVector::from_column_slice(data.y()));
        Ok(Self { kernel, train: data.clone(), factor, alpha })
    }

    pub fn kernel(&self) -> &ScaledKernel {
        &self.kernel
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        let d = self.train.dim();
        if !query.len().is_multiple_of(d) {
            return domain(format!("{} query coordinates do not split into {d}-vectors", query.len()));
        }
        Ok(())
    }

    pub fn predict_mean(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.check_query(query)?;
        let ks = cross_cov(&self.kernel, query, self.train.x(), self.train.dim());
        Ok((ks * &self.alpha).as_slice().to_vec())
    }

    pub fn predict(&self, query: &[f64]) -> Result<Vec<GpPrediction>> {
        self.check_query(query)?;
        let ks = cross_cov(&self.kernel, query, self.train.x(), self.train.dim());
        let mean = &ks * &self.alpha;
        let v = self.factor.chol.l().solve_lower_triangular(&ks.transpose()).expect("positive diagonal");
        let k0 = self.kernel.variance();
        Ok((0..mean.len())
            .map(|i| GpPrediction { mean: mean[i], variance: (k0 - v.column(i).norm_squared()).max(0.0) })
            .collect())
    }

    /// Joint posterior covariance of the latent function at the query points.
    pub fn posterior_cov(&self, query: &[f64]) -> Result<DMatrix<f64>> {
        self.check_query(query)?;
        let d = self.train.dim();
        let ks = cross_cov(&self.kernel, query, self.train.x(), d);
        let v = self.factor.chol.l().solve_lower_triangular(&ks.transpose()).expect("positive diagonal");
        let mut c = gram(&self.kernel, query, d) - v.transpose() * v;
        c = (&c + c.transpose()) * 0.5;
        Ok(c)
    }

    /// `count` joint draws of the latent function at the query points.
    pub fn sample_joint<R: Rng + ?Sized>(&self, query: &[f64], count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let mean = self.predict_mean(query)?;
        let f = factor_with_jitter(self.posterior_cov(query)?)?;
        let l = f.chol.l();
        let m = mean.len();
        Ok((0..count)
            .map(|_| {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let w = &l * z;
                mean.iter().zip(w.iter()).map(|(a, b)| a + b).collect()
            })
            .collect())
    }

    /// `log N(y; 0, K + sigma^2 I)`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.train.len() as f64;
        let y = DVector::from_column_slice(self.train.y());
        let logdet = 2.0 * self.factor.chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        -0.5 * (y.dot(&self.alpha) + logdet + n * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Exact posterior at the query points.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub fit: GpFit,
    pub predictions: Vec<GpPrediction>,
}

pub fn gp_posterior(data: &Dataset, kernel: impl Into<ScaledKernel>, query: &[f64]) -> Result<GpPosterior> {
    let fit = GpFit::new(data, kernel)?;
    let predictions = fit.predict(query)?;
    Ok(GpPosterior { fit, predictions })
}

/// Draws of `kappa` from `p(kappa) N(y; 0, K_kappa + sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaChain {
    pub kappas: Vec<f64>,
    pub acceptance_rate: f64,
    pub numerical_failures: usize,
    pub seed: u64,
    pub burnin: usize,
    pub iters: usize,
}

/// Independence MH over `kappa` with proposals from `kappa_prior`; `template`
/// fixes the family, `nu` and dimension.
#[allow(clippy::too_many_arguments)]
pub fn gp_kappa_mh(
    data: &Dataset,
    template: &KernelSpec,
    variance: VarianceScale,
    kappa_prior: &KappaPrior,
    iters: usize,
    burnin: usize,
    seed: u64,
) -> Result<KappaChain> {
    if iters <= burnin {
        return domain(format!("iters ({iters}) must exceed burnin ({burnin})"));
    }
    kappa_prior.validate()?;
    let mut cache: HashMap<i64, f64> = HashMap::new();
    let mut loglik = |kappa: f64| -> Result<f64> {
        let key = (kappa * 1e12).round() as i64;
        if let Some(&v) = cache.get(&key) {
            return Ok(v);
        }
        let kernel = ScaledKernel::new(template.with_kappa(kappa)?, variance)?;
        let v = GpFit::new(data, kernel)?.log_marginal_likelihood();
        cache.insert(key, v);
        Ok(v)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappa = kappa_prior.center();
    let mut ll = loglik(kappa).map_err(|e| Error::Sampler { iteration: 0, n_grid: 0, kappa, source: Box::new(e) })?;
    let mut accepted = 0;
    let mut failures = 0;
    let mut kappas = Vec::with_capacity(iters - burnin);
    for t in 0..iters {
        let prop = kappa_prior.sample(&mut rng);
        let u: f64 = rng.random();
        if (prop * 1e12).round() == (kappa * 1e12).round() {
            accepted += 1;
        } else {
            match loglik(prop) {
                Ok(l) if l.is_finite() => {
                    if u.ln() < l - ll {
                        kappa = prop;
                        ll = l;
                        accepted += 1;
                    }
                }
                _ => failures += 1,
            }
        }
        if t >= burnin {
            kappas.push(kappa);
        }
    }
    Ok(KappaChain {
        kappas,
        acceptance_rate: accepted as f64 / iters as f64,
        numerical_failures: failures,
        seed,
        burnin,
        iters,
    })
}
