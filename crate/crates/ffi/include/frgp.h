#ifndef FRGP_H
#define FRGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible entry point.
 */
typedef enum FrgpStatus {
  FRGP_STATUS_OK = 0,
  FRGP_STATUS_NULL_POINTER = 1,
  FRGP_STATUS_INVALID_ARGUMENT = 2,
  FRGP_STATUS_NUMERICAL = 3,
  FRGP_STATUS_CONFIG = 4,
  FRGP_STATUS_BUFFER_TOO_SMALL = 5,
  FRGP_STATUS_PANIC = 6,
} FrgpStatus;

/**
 * Retained draws of a sampler run.
 */
typedef struct FrgpChain FrgpChain;

/**
 * Observations `(x_i, y_i)` with known noise variance.
 */
typedef struct FrgpDataset FrgpDataset;

/**
 * Coefficient prior together with the hyperprior on `(N, kappa)`.
 */
typedef struct FrgpModel FrgpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call into the library on this thread.
 */
const char *frgp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *frgp_version(void);

/**
 * Copies `n * dim` coordinates (row-major) and `n` responses.
 *
 * # Safety
 * `x` must point to `n * dim` doubles, `y` to `n` doubles, `out` to writable storage.
 */
enum FrgpStatus frgp_dataset_new(const double *x,
                                 const double *y,
                                 size_t n,
                                 size_t dim,
                                 double sigma_sq,
                                 struct FrgpDataset **out);

/**
 * # Safety
 * `data` must come from `frgp_dataset_new` and not be freed twice. Null is ignored.
 */
void frgp_dataset_free(struct FrgpDataset *data);

/**
 * Grid-interpolation prior with a Matérn parent kernel and `kappa ~ Gamma(shape, scale)`.
 *
 * # Safety
 * `n_support` and `n_log_weights` must point to `n_len` elements; `out` must be writable.
 */
enum FrgpStatus frgp_model_gpi_matern(double nu,
                                      size_t dim,
                                      bool unit_variance,
                                      const size_t *n_support,
                                      const double *n_log_weights,
                                      size_t n_len,
                                      double kappa_shape,
                                      double kappa_scale,
                                      struct FrgpModel **out);

/**
 * One-dimensional SPDE prior of even order `beta` with `kappa ~ Gamma(shape, scale)`.
 *
 * # Safety
 * As for [`frgp_model_gpi_matern`].
 */
enum FrgpStatus frgp_model_spde(uint32_t beta,
                                bool unit_variance,
                                const size_t *n_support,
                                const double *n_log_weights,
                                size_t n_len,
                                double kappa_shape,
                                double kappa_scale,
                                struct FrgpModel **out);

/**
 * # Safety
 * `model` must come from a `frgp_model_*` constructor. Null is ignored.
 */
void frgp_model_free(struct FrgpModel *model);

/**
 * Unnormalized `log p(N, kappa | D)`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum FrgpStatus frgp_log_marginal(const struct FrgpDataset *data,
                                  const struct FrgpModel *model,
                                  size_t n_grid,
                                  double kappa,
                                  double *out);

/**
 * Runs the hierarchical sampler for `iters` iterations, keeping draws after `burnin`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum FrgpStatus frgp_run_sampler(const struct FrgpDataset *data,
                                 const struct FrgpModel *model,
                                 size_t iters,
                                 size_t burnin,
                                 uint64_t seed,
                                 struct FrgpChain **out);

/**
 * Runs the method described by a JSON experiment config on `data` and
 * returns the chain (finite-rank methods only).
 *
 * # Safety
 * `config_json` must be NUL-terminated; handles must be live; `out` writable.
 */
enum FrgpStatus frgp_run_config(const struct FrgpDataset *data,
                                const char *config_json,
                                uint64_t seed,
                                struct FrgpChain **out);

/**
 * # Safety
 * `chain` must come from `frgp_run_sampler`/`frgp_run_config`. Null is ignored.
 */
void frgp_chain_free(struct FrgpChain *chain);

/**
 * Number of retained draws (0 for a null handle).
 *
 * # Safety
 * `chain` must be live or null.
 */
size_t frgp_chain_len(const struct FrgpChain *chain);

/**
 * Fraction of accepted MH proposals (NaN for a null handle).
 *
 * # Safety
 * `chain` must be live or null.
 */
double frgp_chain_acceptance_rate(const struct FrgpChain *chain);

/**
 * `(N, kappa)` of retained draw `index`.
 *
 * # Safety
 * `chain` must be live; `n_grid` and `kappa` writable.
 */
enum FrgpStatus frgp_chain_hyper(const struct FrgpChain *chain,
                                 size_t index,
                                 size_t *n_grid,
                                 double *kappa);

/**
 * Posterior mean function at `n_query` points (`n_query * dim` row-major
 * coordinates), written to `out` (capacity `out_len`).
 *
 * # Safety
 * `query` must hold `n_query * dim` doubles and `out` `out_len` writable doubles.
 */
enum FrgpStatus frgp_chain_posterior_mean(const struct FrgpChain *chain,
                                          const double *query,
                                          size_t n_query,
                                          double *out,
                                          size_t out_len);

/**
 * Dense `(N+1) x (N+1)` SPDE precision, row-major, into `out` (capacity `out_len`).
 *
 * # Safety
 * `out` must hold `out_len` writable doubles.
 */
enum FrgpStatus frgp_spde_precision(size_t n_grid,
                                    double kappa,
                                    uint32_t beta,
                                    double *out,
                                    size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRGP_H */
