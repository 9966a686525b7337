//! C ABI for `frgp`.
//!
//! Objects are opaque handles created by `frgp_*_new`/`frgp_run_sampler` and
//! released with the matching `frgp_*_free`. Every fallible call returns a
//! [`FrgpStatus`]; on failure `frgp_last_error` describes the error for the
//! calling thread. Panics are caught at the boundary and reported as
//! `FRGP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use frgp::experiments::{fit_model, ExperimentConfig, FittedModel};
use frgp::inference::{
    log_marginal, posterior_mean, run_sampler, ChainRecord, Dataset, HyperPrior, KappaPrior, PriorModel,
    SamplerConfig, VarianceScale,
};
use frgp::kernels::KernelFamily;
use frgp::Error;

/// Result codes of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Config = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Observations `(x_i, y_i)` with known noise variance.
pub struct FrgpDataset(Dataset);

/// Coefficient prior together with the hyperprior on `(N, kappa)`.
pub struct FrgpModel {
    model: PriorModel,
    prior: HyperPrior,
}

/// Retained draws of a sampler run.
pub struct FrgpChain(ChainRecord);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FrgpStatus {
    if e.is_numerical() {
        FrgpStatus::Numerical
    } else if matches!(e, Error::Config(_) | Error::Json(_)) {
        FrgpStatus::Config
    } else {
        FrgpStatus::InvalidArgument
    }
}

fn guard<F: FnOnce() -> Result<(), (FrgpStatus, String)>>(f: F) -> FrgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FrgpStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("panic inside frgp");
            FrgpStatus::Panic
        }
    }
}

fn lift<T>(r: frgp::Result<T>) -> Result<T, (FrgpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FrgpStatus, String) {
    (FrgpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (FrgpStatus, String) {
    (FrgpStatus::InvalidArgument, msg.into())
}

unsafe fn slice_of<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (FrgpStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    // SAFETY: checked non-null by the caller.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn frgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn frgp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `n * dim` coordinates (row-major) and `n` responses.
///
/// # Safety
/// `x` must point to `n * dim` doubles, `y` to `n` doubles, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn frgp_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    dim: usize,
    sigma_sq: f64,
    out: *mut *mut FrgpDataset,
) -> FrgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = unsafe { slice_of(x, n * dim, "x")? }.to_vec();
        let y = unsafe { slice_of(y, n, "y")? }.to_vec();
        let d = lift(Dataset::new(x, y, sigma_sq, dim))?;
        unsafe { put(out, FrgpDataset(d)) };
        Ok(())
    })
}

/// # Safety
/// `data` must come from `frgp_dataset_new` and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn frgp_dataset_free(data: *mut FrgpDataset) {
    if !data.is_null() {
        drop(unsafe { Box::from_raw(data) });
    }
}

unsafe fn hyperprior(
    n_support: *const usize,
    n_log_weights: *const f64,
    n_len: usize,
    kappa_shape: f64,
    kappa_scale: f64,
) -> Result<HyperPrior, (FrgpStatus, String)> {
    let support = unsafe { slice_of(n_support, n_len, "n_support")? }.to_vec();
    let weights = unsafe { slice_of(n_log_weights, n_len, "n_log_weights")? }.to_vec();
    lift(HyperPrior::new(support, weights, KappaPrior::Gamma { shape: kappa_shape, scale: kappa_scale }))
}

fn variance(unit: bool) -> VarianceScale {
    if unit {
        VarianceScale::Unit
    } else {
        VarianceScale::Verbatim
    }
}

/// Grid-interpolation prior with a Matérn parent kernel and `kappa ~ Gamma(shape, scale)`.
///
/// # Safety
/// `n_support` and `n_log_weights` must point to `n_len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frgp_model_gpi_matern(
    nu: f64,
    dim: usize,
    unit_variance: bool,
    n_support: *const usize,
    n_log_weights: *const f64,
    n_len: usize,
    kappa_shape: f64,
    kappa_scale: f64,
    out: *mut *mut FrgpModel,
) -> FrgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(nu > 0.0 && nu.is_finite()) || dim == 0 {
            return Err(invalid("nu must be positive and dim at least 1"));
        }
        let prior = unsafe { hyperprior(n_support, n_log_weights, n_len, kappa_shape, kappa_scale)? };
        let model = PriorModel::Gpi { family: KernelFamily::Matern, nu: Some(nu), dim, variance: variance(unit_variance) };
        unsafe { put(out, FrgpModel { model, prior }) };
        Ok(())
    })
}

/// One-dimensional SPDE prior of even order `beta` with `kappa ~ Gamma(shape, scale)`.
///
/// # Safety
/// As for [`frgp_model_gpi_matern`].
#[no_mangle]
pub unsafe extern "C" fn frgp_model_spde(
    beta: u32,
    unit_variance: bool,
    n_support: *const usize,
    n_log_weights: *const f64,
    n_len: usize,
    kappa_shape: f64,
    kappa_scale: f64,
    out: *mut *mut FrgpModel,
) -> FrgpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if beta < 2 || !beta.is_multiple_of(2) {
            return Err(invalid("beta must be even and at least 2"));
        }
        let prior = unsafe { hyperprior(n_support, n_log_weights, n_len, kappa_shape, kappa_scale)? };
        let model = PriorModel::Spde { beta, variance: variance(unit_variance) };
        unsafe { put(out, FrgpModel { model, prior }) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from a `frgp_model_*` constructor. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn frgp_model_free(model: *mut FrgpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Unnormalized `log p(N, kappa | D)`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frgp_log_marginal(
    data: *const FrgpDataset,
    model: *const FrgpModel,
    n_grid: usize,
    kappa: f64,
    out: *mut f64,
) -> FrgpStatus {
    guard(|| {
        let (d, m) = unsafe { (data.as_ref().ok_or_else(|| null("data"))?, model.as_ref().ok_or_else(|| null("model"))?) };
        if out.is_null() {
            return Err(null("out"));
        }
        let v = lift(log_marginal(n_grid, kappa, &d.0, &m.prior, &m.model))?;
        unsafe { *out = v };
        Ok(())
    })
}

/// Runs the hierarchical sampler for `iters` iterations, keeping draws after `burnin`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn frgp_run_sampler(
    data: *const FrgpDataset,
    model: *const FrgpModel,
    iters: usize,
    burnin: usize,
    seed: u64,
    out: *mut *mut FrgpChain,
) -> FrgpStatus {
    guard(|| {
        let (d, m) = unsafe { (data.as_ref().ok_or_else(|| null("data"))?, model.as_ref().ok_or_else(|| null("model"))?) };
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SamplerConfig { iters, burnin, init: None };
        let chain = lift(run_sampler(&d.0, &m.prior, &m.model, &cfg, seed))?;
        unsafe { put(out, FrgpChain(chain)) };
        Ok(())
    })
}

/// Runs the method described by a JSON experiment config on `data` and
/// returns the chain (finite-rank methods only).
///
/// # Safety
/// `config_json` must be NUL-terminated; handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn frgp_run_config(
    data: *const FrgpDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut FrgpChain,
) -> FrgpStatus {
    guard(|| {
        let d = unsafe { data.as_ref().ok_or_else(|| null("data"))? };
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }
            .to_str()
            .map_err(|_| (FrgpStatus::Config, "config is not UTF-8".to_string()))?;
        let cfg = lift(ExperimentConfig::from_json(text))?;
        match lift(fit_model(&cfg, &d.0, seed))? {
            FittedModel::Chain(c) => {
                unsafe { put(out, FrgpChain(c)) };
                Ok(())
            }
            FittedModel::Gp { .. } => Err((FrgpStatus::Config, "exact_gp configs produce no chain".into())),
        }
    })
}

/// # Safety
/// `chain` must come from `frgp_run_sampler`/`frgp_run_config`. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn frgp_chain_free(chain: *mut FrgpChain) {
    if !chain.is_null() {
        drop(unsafe { Box::from_raw(chain) });
    }
}

/// Number of retained draws (0 for a null handle).
///
/// # Safety
/// `chain` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn frgp_chain_len(chain: *const FrgpChain) -> usize {
    unsafe { chain.as_ref() }.map_or(0, |c| c.0.samples.len())
}

/// Fraction of accepted MH proposals (NaN for a null handle).
///
/// # Safety
/// `chain` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn frgp_chain_acceptance_rate(chain: *const FrgpChain) -> f64 {
    unsafe { chain.as_ref() }.map_or(f64::NAN, |c| c.0.acceptance_rate)
}

/// `(N, kappa)` of retained draw `index`.
///
/// # Safety
/// `chain` must be live; `n_grid` and `kappa` writable.
#[no_mangle]
pub unsafe extern "C" fn frgp_chain_hyper(
    chain: *const FrgpChain,
    index: usize,
    n_grid: *mut usize,
    kappa: *mut f64,
) -> FrgpStatus {
    guard(|| {
        let c = unsafe { chain.as_ref().ok_or_else(|| null("chain"))? };
        if n_grid.is_null() || kappa.is_null() {
            return Err(null("output"));
        }
        let s = c.0.samples.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        unsafe {
            *n_grid = s.n_grid;
            *kappa = s.kappa;
        }
        Ok(())
    })
}

/// Posterior mean function at `n_query` points (`n_query * dim` row-major
/// coordinates), written to `out` (capacity `out_len`).
///
/// # Safety
/// `query` must hold `n_query * dim` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn frgp_chain_posterior_mean(
    chain: *const FrgpChain,
    query: *const f64,
    n_query: usize,
    out: *mut f64,
    out_len: usize,
) -> FrgpStatus {
    guard(|| {
        let c = unsafe { chain.as_ref().ok_or_else(|| null("chain"))? };
        let q = unsafe { slice_of(query, n_query * c.0.dim, "query")? };
        if out_len < n_query {
            return Err((FrgpStatus::BufferTooSmall, format!("need {n_query} outputs, have {out_len}")));
        }
        if out.is_null() && n_query > 0 {
            return Err(null("out"));
        }
        let m = lift(posterior_mean(&c.0, q))?;
        if n_query > 0 {
            unsafe { ptr::copy_nonoverlapping(m.as_ptr(), out, n_query) };
        }
        Ok(())
    })
}

/// Dense `(N+1) x (N+1)` SPDE precision, row-major, into `out` (capacity `out_len`).
///
/// # Safety
/// `out` must hold `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn frgp_spde_precision(
    n_grid: usize,
    kappa: f64,
    beta: u32,
    out: *mut f64,
    out_len: usize,
) -> FrgpStatus {
    guard(|| {
        let q = lift(frgp::spde::precision(n_grid, kappa, beta))?.to_dense();
        let need = q.len();
        if out_len < need {
            return Err((FrgpStatus::BufferTooSmall, format!("need {need} outputs, have {out_len}")));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = unsafe { slice::from_raw_parts_mut(out, need) };
        let m = q.nrows();
        for i in 0..m {
            for j in 0..m {
                dst[i * m + j] = q[(i, j)];
            }
        }
        Ok(())
    })
}
