//! Finite-rank Gaussian process priors on hat-function bases.
//!
//! A function on `[0, 1]^d` is represented as `f(x) = sum_j w_j psi_j(x)` with
//! piecewise-linear hat functions on a uniform grid of `N + 1` nodes per axis.
//! Two priors on the coefficients are provided: a banded SPDE/FEM precision
//! ([`spde`]) and a grid-interpolation covariance ([`gpi`]). Hyperparameters
//! `(N, kappa)` are sampled by Metropolis-Hastings with the coefficients
//! integrated out ([`inference`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod cli;
pub mod diagnostics;
pub mod basis;
pub mod error;
pub mod exact_gp;
pub mod gpi;
pub mod inference;
pub mod experiments;
pub mod kernels;
pub mod special;
pub mod plot;
pub mod seeding;
pub mod spde;
pub mod stats;

pub use error::{Error, Result};
