//! Numerical checks of the approximation theory: uniform-nondegeneracy of
//! local linear errors, interpolation error, an L2-versus-sup bound,
//! the spectrum of the interior tridiagonal matrix, the conditional
//! covariance identity, and Monte Carlo small-ball probabilities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::banded::BandCholesky;
use crate::basis::{interpolate_function, BasisExpansion};
use crate::error::{domain, Result};
use crate::gpi::factor_with_jitter;
use crate::inference::CoefficientPrior;
use crate::spde::{conditional_moments, precision};
use crate::stats::{normal_cdf, wilson_interval};

/// Default discretization of each interval for [`minimax_linear_error`].
pub const DEFAULT_MINIMAX_POINTS: usize = 257;

/// Best uniform error of a linear fit `a x + b` to `f` on the `grid_pts`
/// equispaced points of `[a, b]`.
///
/// For a two-parameter Haar system the discrete minimax error is the largest
/// minimax error over 3-point subsets; on points `x1 < x2 < x3` that error is
/// `|(x3-x2) f1 - (x3-x1) f2 + (x2-x1) f3| / (2 (x3-x1))`.
pub fn minimax_linear_error<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, grid_pts: usize) -> Result<f64> {
    if !(b > a) {
        return domain(format!("interval [{a}, {b}] is empty"));
    }
    if grid_pts < 3 {
        return domain("minimax_linear_error needs at least 3 points");
    }
    let step = (b - a) / (grid_pts - 1) as f64;
    let x: Vec<f64> = (0..grid_pts).map(|i| if i + 1 == grid_pts { b } else { a + i as f64 * step }).collect();
    let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
    let m = grid_pts;
    let best = (0..m - 2)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0f64;
            for k in i + 2..m {
                let span = x[k] - x[i];
                for j in i + 1..k {
                    let num = (x[k] - x[j]) * y[i] - span * y[j] + (x[j] - x[i]) * y[k];
                    best = best.max(num.abs() / (2.0 * span));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// Outcome of `M max_k m_k^2 <= K sum_k m_k^2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnReport {
    pub intervals: usize,
    pub m_values: Vec<f64>,
    /// `M max m_k^2 / sum m_k^2`, 0 when every `m_k` vanishes.
    pub ratio: f64,
    pub k_used: f64,
    pub holds: bool,
}

/// Computes `m_k` on `I_k = [k/M, (k+1)/M]` and evaluates the inequality with constant `k`.
pub fn un_condition_check<F: Fn(f64) -> f64 + Sync>(f: F, intervals: usize, k: f64) -> Result<UnReport> {
    un_condition_check_with(f, intervals, k, DEFAULT_MINIMAX_POINTS)
}

pub fn un_condition_check_with<F: Fn(f64) -> f64 + Sync>(
    f: F,
    intervals: usize,
    k: f64,
    grid_pts: usize,
) -> Result<UnReport> {
    if intervals < 2 {
        return domain("UN check needs M >= 2");
    }
    let mf = intervals as f64;
    let m_values = (0..intervals)
        .map(|i| minimax_linear_error(&f, i as f64 / mf, (i + 1) as f64 / mf, grid_pts))
        .collect::<Result<Vec<_>>>()?;
    let max_sq = m_values.iter().map(|v| v * v).fold(0.0, f64::max);
    let sum_sq: f64 = m_values.iter().map(|v| v * v).sum();
    let ratio = if sum_sq > 0.0 { mf * max_sq / sum_sq } else { 0.0 };
    let holds = mf * max_sq <= k * sum_sq * (1.0 + 1e-12);
    Ok(UnReport { intervals, m_values, ratio, k_used: k, holds })
}

/// `sup |f - I_N f|` over `probe_pts` equispaced points of `[0, 1]`.
pub fn sup_interp_error<F: Fn(f64) -> f64>(f: F, n_grid: usize, probe_pts: usize) -> Result<f64> {
    if n_grid < 1 || probe_pts < 2 {
        return domain("sup_interp_error needs N >= 1 and at least 2 probes");
    }
    let h = interpolate_function(|x| f(x[0]), n_grid, 1)?;
    sup_distance(&h, &f, probe_pts)
}

fn sup_distance<F: Fn(f64) -> f64>(h: &BasisExpansion, f: &F, probe_pts: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for i in 0..probe_pts {
        let x = i as f64 / (probe_pts - 1) as f64;
        best = best.max((h.evaluate(&[x])? - f(x)).abs());
    }
    Ok(best)
}

/// Squared L2 distance by composite Simpson with `panels` (even) subintervals.
fn l2_distance_sq<F: Fn(f64) -> f64>(h: &BasisExpansion, f: &F, panels: usize) -> Result<f64> {
    let step = 1.0 / panels as f64;
    let mut s = 0.0;
    for i in 0..=panels {
        let x = (i as f64 * step).min(1.0);
        let e = h.evaluate(&[x])? - f(x);
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * e * e;
    }
    Ok(s * step / 3.0)
}

/// Both sides of `||h - f||_2^2 >= min(s^2 / K, N^2 (s^2)^{3/2} / (C K^{3/2})) / 32`, `s = ||h - f||_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L2SupReport {
    pub l2_sq: f64,
    pub sup: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn l2_vs_sup_check<F: Fn(f64) -> f64>(h: &BasisExpansion, f: F, k: f64, c2f: f64) -> Result<L2SupReport> {
    if h.dim() != 1 {
        return domain("l2_vs_sup_check is one-dimensional");
    }
    if !(k > 0.0 && c2f > 0.0) {
        return domain("constants must be positive");
    }
    let l2_sq = l2_distance_sq(h, &f, 1 << 12)?;
    let sup = sup_distance(h, &f, (1 << 14) + 1)?;
    let n = h.n_grid() as f64;
    let s2 = sup * sup;
    let rhs = (s2 / k).min(n * n * s2.powf(1.5) / (c2f * k.powf(1.5))) / 32.0;
    Ok(L2SupReport { l2_sq, sup, lhs: l2_sq, rhs, holds: l2_sq >= rhs })
}

/// Which closed form reproduced the spectrum of `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenForm {
    /// `2 + kappa^2/N^2 - 2 cos(k/N)`
    CosKOverN,
    /// `2 + kappa^2/N^2 - 2 cos(k pi/N)`
    CosKPiOverN,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenReport {
    pub n_grid: usize,
    pub kappa: f64,
    pub eigenvalues: Vec<f64>,
    pub deviation_cos_k_over_n: f64,
    pub deviation_cos_k_pi_over_n: f64,
    /// The form matching to 1e-8, if exactly one does.
    pub matches: Option<EigenForm>,
}

/// Dense eigensolve of the `(N-1) x (N-1)` tridiagonal `T` against both closed forms.
pub fn eigen_formula_check(n_grid: usize, kappa: f64) -> Result<EigenReport> {
    if n_grid < 3 {
        return domain("eigen_formula_check needs N >= 3");
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return domain("kappa must be nonnegative");
    }
    let m = n_grid - 1;
    let nf = n_grid as f64;
    let diag = 2.0 + kappa * kappa / (nf * nf);
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            diag
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let dev = |arg: &dyn Fn(f64) -> f64| {
        let mut cand: Vec<f64> = (1..=m).map(|k| diag - 2.0 * arg(k as f64).cos()).collect();
        cand.sort_by(f64::total_cmp);
        cand.iter().zip(&eig).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let plain = dev(&|k| k / nf);
    let with_pi = dev(&|k| k * std::f64::consts::PI / nf);
    let matches = match (plain < 1e-8, with_pi < 1e-8) {
        (true, false) => Some(EigenForm::CosKOverN),
        (false, true) => Some(EigenForm::CosKPiOverN),
        _ => None,
    };
    Ok(EigenReport {
        n_grid,
        kappa,
        eigenvalues: eig,
        deviation_cos_k_over_n: plain,
        deviation_cos_k_pi_over_n: with_pi,
        matches,
    })
}

/// Conditional-covariance and mean identity versus conditioning of the dense precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SchurReport {
    pub n_grid: usize,
    pub kappa: f64,
    pub beta: u32,
    /// Max entrywise difference between `X_N^beta / N^{2 beta - 1}` and `(Q_II)^{-1}`.
    pub cov_deviation: f64,
    /// Max difference of the conditional means at `(w_0, w_N) = (1, -1)`, relative to their scale.
    pub mean_deviation: f64,
}

pub fn schur_identity_check(n_grid: usize, kappa: f64, beta: u32) -> Result<SchurReport> {
    let (mean, cov) = conditional_moments(1.0, -1.0, n_grid, kappa, beta)?;
    let q = precision(n_grid, kappa, beta)?.to_dense();
    let m = n_grid - 1;
    let qii = q.view((1, 1), (m, m)).into_owned();
    let lu = qii.clone().lu();
    let want_cov = lu.try_inverse().ok_or_else(|| crate::Error::Conditioning("interior block is singular".into()))?;
    let rhs: DVector<f64> = q.view((1, 0), (m, 1)).column(0) - q.view((1, n_grid), (m, 1)).column(0);
    let want_mean = -qii.lu().solve(&rhs).ok_or_else(|| crate::Error::Conditioning("interior block is singular".into()))?;
    let scale = want_mean.amax().max(1.0);
    Ok(SchurReport {
        n_grid,
        kappa,
        beta,
        cov_deviation: (&cov - &want_cov).amax(),
        mean_deviation: (&mean - &want_mean).amax() / scale,
    })
}

/// Norm used by the small-ball probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallBallNorm {
    /// `max_j |w_j|`, the sup norm of a piecewise-linear path.
    SupAtGrid,
    /// Exact L2 norm of a one-dimensional piecewise-linear path.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallBallEstimate {
    pub epsilon: f64,
    pub successes: usize,
    pub draws: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// No success was observed; `ci_high` is a one-sided 95% bound.
    pub one_sided: bool,
}

impl SmallBallEstimate {
    fn new(epsilon: f64, successes: usize, draws: usize) -> Self {
        let one_sided = successes == 0;
        let (lo, hi) = if one_sided { wilson_interval(0, draws, 1.6449) } else { wilson_interval(successes, draws, 1.96) };
        Self { epsilon, successes, draws, estimate: successes as f64 / draws as f64, ci_low: lo, ci_high: hi, one_sided }
    }

    /// `-log` of the estimate (infinite when no success was observed).
    pub fn neg_log(&self) -> f64 {
        -self.estimate.ln()
    }
}

enum PriorDraw {
    Lower(DMatrix<f64>),
    Precision(BandCholesky),
}

impl PriorDraw {
    fn new(prior: &CoefficientPrior) -> Result<Self> {
        Ok(match prior {
            CoefficientPrior::Precision(q) => PriorDraw::Precision(q.cholesky()?),
            other => PriorDraw::Lower(factor_with_jitter(other.covariance_dense()?)?.chol.l()),
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            PriorDraw::Lower(l) => {
                let z = DVector::from_fn(l.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
                (l * z).as_slice().to_vec()
            }
            PriorDraw::Precision(c) => c.sample_inverse(rng),
        }
    }
}

fn path_norm(w: &[f64], norm: SmallBallNorm) -> f64 {
    match norm {
        SmallBallNorm::SupAtGrid => w.iter().fold(0.0, |m, v| m.max(v.abs())),
        SmallBallNorm::L2 => {
            let h = 1.0 / (w.len() - 1) as f64;
            w.windows(2).map(|p| h / 3.0 * (p[0] * p[0] + p[0] * p[1] + p[1] * p[1])).sum::<f64>().sqrt()
        }
    }
}

/// Draws per independent stream in the Monte Carlo probes.
const MC_CHUNK: usize = 4096;

/// Norms of `draws` prior paths, generated in fixed-size chunks on
/// independent ChaCha streams so the result does not depend on the thread count.
fn sample_norms(prior: &CoefficientPrior, norm: SmallBallNorm, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if norm == SmallBallNorm::L2 && matches!(prior, CoefficientPrior::Covariance(g) if g.dim() != 1) {
        return domain("the L2 small-ball norm is one-dimensional");
    }
    let sampler = PriorDraw::new(prior)?;
    let chunks = draws.div_ceil(MC_CHUNK);
    let out: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            (0..len).map(|_| path_norm(&sampler.draw(&mut rng), norm)).collect()
        })
        .collect();
    Ok(out.concat())
}

/// Monte Carlo estimate of `P(||f_N|| < epsilon)` with a Wilson interval.
pub fn small_ball_mc(
    prior: &CoefficientPrior,
    epsilon: f64,
    norm: SmallBallNorm,
    draws: usize,
    seed: u64,
) -> Result<SmallBallEstimate> {
    Ok(small_ball_curve(prior, &[epsilon], norm, draws, seed)?.remove(0))
}

/// Estimates for several radii from one set of draws (common random numbers).
pub fn small_ball_curve(
    prior: &CoefficientPrior,
    epsilons: &[f64],
    norm: SmallBallNorm,
    draws: usize,
    seed: u64,
) -> Result<Vec<SmallBallEstimate>> {
    if draws < 1000 {
        return domain("small-ball probes need at least 1000 draws");
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return domain("radii must be positive");
    }
    let norms = sample_norms(prior, norm, draws, seed)?;
    Ok(epsilons
        .iter()
        .map(|&e| SmallBallEstimate::new(e, norms.iter().filter(|&&v| v < e).count(), draws))
        .collect())
}

/// `-log P(||f_N||_inf < epsilon)` under the SPDE prior for each grid size
/// (sup over the nodes, which is the sup of the piecewise-linear path).
pub fn small_ball_trend(
    kappa: f64,
    beta: u32,
    epsilon: f64,
    n_values: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<(usize, SmallBallEstimate)>> {
    n_values
        .iter()
        .map(|&n| {
            let prior: CoefficientPrior = precision(n, kappa, beta)?.into();
            Ok((n, small_ball_mc(&prior, epsilon, SmallBallNorm::SupAtGrid, draws, seed)?))
        })
        .collect()
}

/// Ratio of the last increment of a curve to its first. A curve that rises and
/// then levels off has a small ratio; steady logarithmic growth on a doubling
/// grid gives a ratio near one.
pub fn plateau_ratio(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return f64::NAN;
    }
    let first = values[1] - values[0];
    let last = values[values.len() - 1] - values[values.len() - 2];
    last / first
}

/// `P(a1 < X1 < b1, a2 < X2 < b2)` for a centred bivariate normal, by
/// integrating the conditional probability of `X2` against the density of
/// `X1` with composite Gauss-Legendre quadrature.
pub fn bivariate_normal_rectangle(cov: [[f64; 2]; 2], lower: [f64; 2], upper: [f64; 2]) -> Result<f64> {
    let (v1, v2, c) = (cov[0][0], cov[1][1], cov[0][1]);
    if !(v1 > 0.0 && v2 > 0.0) || c * c >= v1 * v2 || (cov[1][0] - c).abs() > 1e-14 * (v1 * v2).sqrt() {
        return domain("covariance must be symmetric positive definite");
    }
    let s1 = v1.sqrt();
    let cond_sd = (v2 - c * c / v1).sqrt();
    let (a, b) = (lower[0].max(-12.0 * s1), upper[0].min(12.0 * s1));
    if !(b > a) {
        return Ok(0.0);
    }
    // 5-point Gauss-Legendre on each of 400 panels
    const NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let panels = 400;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (t, w) in NODES.iter().zip(WEIGHTS) {
            let x = mid + 0.5 * h * t;
            let dens = (-0.5 * x * x / v1).exp() / (s1 * (2.0 * std::f64::consts::PI).sqrt());
            let mu = c / v1 * x;
            let pr = normal_cdf((upper[1] - mu) / cond_sd) - normal_cdf((lower[1] - mu) / cond_sd);
            total += 0.5 * h * w * dens * pr;
        }
    }
    Ok(total)
}
