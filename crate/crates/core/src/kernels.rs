//! Stationary covariance kernels: Matérn (with the SPDE variance scaling
//! `tau^2`) and squared-exponential.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::special::{bessel_k, ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern,
    SquaredExponential,
}

/// A stationary kernel family together with its hyperparameters.
///
/// `nu` is ignored by the squared-exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub kappa: f64,
    pub nu: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn matern(kappa: f64, nu: f64, dim: usize) -> Result<Self> {
        let spec = Self { family: KernelFamily::Matern, kappa, nu, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(kappa: f64, dim: usize) -> Result<Self> {
        let spec = Self { family: KernelFamily::SquaredExponential, kappa, nu: f64::NAN, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        let spec = Self { kappa, ..*self };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return domain(format!("kappa must be positive, got {}", self.kappa));
        }
        if self.dim == 0 {
            return domain("dimension must be at least 1");
        }
        if self.family == KernelFamily::Matern && !(self.nu > 0.0 && self.nu.is_finite()) {
            return domain(format!("Matérn smoothness must be positive, got {}", self.nu));
        }
        Ok(())
    }

    /// Covariance at Euclidean distance `t`.
    pub fn cov(&self, t: f64) -> Result<f64> {
        match self.family {
            KernelFamily::Matern => matern_cov(t, self),
            KernelFamily::SquaredExponential => sq_exp_cov(t, self.kappa),
        }
    }

    /// Covariance between two points of dimension `self.dim`.
    pub fn cov_points(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != self.dim || b.len() != self.dim {
            return domain(format!(
                "point dimension {}/{} does not match kernel dimension {}",
                a.len(),
                b.len(),
                self.dim
            ));
        }
        let t = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        self.cov(t)
    }

    /// Marginal variance `k(0)`.
    pub fn variance(&self) -> f64 {
        match self.family {
            KernelFamily::Matern => tau_squared(self.kappa, self.nu, self.dim).unwrap_or(f64::NAN),
            KernelFamily::SquaredExponential => 1.0,
        }
    }
}

/// `Gamma(nu) / (Gamma(nu + d/2) (4 pi)^{d/2} kappa^{2 nu})`.
pub fn tau_squared(kappa: f64, nu: f64, dim: usize) -> Result<f64> {
    if !(kappa > 0.0) || !(nu > 0.0) || dim == 0 {
        return domain(format!("tau_squared needs kappa > 0, nu > 0, d >= 1 (got {kappa}, {nu}, {dim})"));
    }
    let half_d = dim as f64 / 2.0;
    let log_tau2 = ln_gamma(nu)
        - ln_gamma(nu + half_d)
        - half_d * (4.0 * std::f64::consts::PI).ln()
        - 2.0 * nu * kappa.ln();
    Ok(log_tau2.exp())
}

/// Below this value of `kappa * t` the Matérn correlation is returned as 1.
const MATERN_ORIGIN: f64 = 1e-12;

/// Matérn covariance `tau^2 2^{1-nu}/Gamma(nu) (kappa t)^nu K_nu(kappa t)`.
///
/// Half-integer `nu` goes through the polynomial-times-exponential closed form;
/// any other order uses the Bessel evaluation.
pub fn matern_cov(t: f64, spec: &KernelSpec) -> Result<f64> {
    if !(t >= 0.0) {
        return domain(format!("distance must be nonnegative, got {t}"));
    }
    if spec.family != KernelFamily::Matern {
        return domain("matern_cov called with a non-Matérn kernel");
    }
    let tau2 = tau_squared(spec.kappa, spec.nu, spec.dim)?;
    Ok(tau2 * matern_correlation(spec.kappa * t, spec.nu))
}

/// Unit-variance Matérn correlation at scaled distance `z = kappa t`.
pub fn matern_correlation(z: f64, nu: f64) -> f64 {
    if z < MATERN_ORIGIN {
        return 1.0;
    }
    if let Some(p) = half_integer_index(nu) {
        return half_integer_correlation(z, p);
    }
    let k = bessel_k(nu, z);
    if k == 0.0 {
        return 0.0;
    }
    let log_val = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln() + k.ln();
    log_val.exp()
}

fn half_integer_index(nu: f64) -> Option<u32> {
    let p = nu - 0.5;
    if (0.0..=50.0).contains(&p) && p.fract() == 0.0 {
        Some(p as u32)
    } else {
        None
    }
}

/// `exp(-z) sum_{k=0}^{p} p!/(2p)! (p+k)!/(k!(p-k)!) (2z)^{p-k}`.
fn half_integer_correlation(z: f64, p: u32) -> f64 {
    let p = p as usize;
    let ln_fact = |n: usize| ln_gamma(n as f64 + 1.0);
    let lead = ln_fact(p) - ln_fact(2 * p);
    let mut poly = 0.0;
    for k in 0..=p {
        let coef = (lead + ln_fact(p + k) - ln_fact(k) - ln_fact(p - k)).exp();
        poly += coef * (2.0 * z).powi((p - k) as i32);
    }
    poly * (-z).exp()
}

/// `exp(-kappa^2 t^2)`.
pub fn sq_exp_cov(t: f64, kappa: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return domain(format!("distance must be nonnegative, got {t}"));
    }
    if !(kappa > 0.0) {
        return domain(format!("kappa must be positive, got {kappa}"));
    }
    Ok((-kappa * kappa * t * t).exp())
}
