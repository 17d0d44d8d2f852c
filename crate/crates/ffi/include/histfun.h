/* C interface to the histfun historical functional regression library. */

#ifndef HISTFUN_H
#define HISTFUN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by fallible operations.
 */
typedef enum HfStatus {
  /**
   * Success.
   */
  HF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HF_STATUS_NULL_ARGUMENT = 1,
  /**
   * Input validation failed; details via `hf_last_error_message`.
   */
  HF_STATUS_INVALID_INPUT = 2,
  /**
   * A numerical routine failed to produce a result.
   */
  HF_STATUS_NUMERICAL_FAILURE = 3,
  /**
   * An output buffer was too small for the requested data.
   */
  HF_STATUS_BUFFER_TOO_SMALL = 4,
  /**
   * A panic was caught at the FFI boundary.
   */
  HF_STATUS_INTERNAL_PANIC = 5,
} HfStatus;

/**
 * Opaque centered dataset handle.
 */
typedef struct HfDataset HfDataset;

/**
 * Opaque fitted-model handle.
 */
typedef struct HfFit HfFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf`
 * (NUL-terminated, truncated to `cap` bytes) and returns the full
 * message length in bytes excluding the terminator. `buf` may be null
 * to query the length alone.
 */
size_t hf_last_error_message(char *buf, size_t cap);

/**
 * Builds a centered dataset from row-major curve samples.
 *
 * `grid` holds `n_points` strictly increasing times starting at 0;
 * `curves` holds `n * n_points` values, one curve per row; `responses`
 * holds `n` scalars. Returns null on error (see `hf_last_error_message`).
 */
struct HfDataset *hf_dataset_new(const double *grid,
                                 size_t n_points,
                                 const double *curves,
                                 size_t n,
                                 const double *responses);

/**
 * Releases a dataset handle. Null is ignored.
 */
void hf_dataset_free(struct HfDataset *dataset);

/**
 * Number of curves in the dataset.
 */
size_t hf_dataset_len(const struct HfDataset *dataset);

/**
 * Fits the model by BIC search over the given tuning grids and returns
 * an owned fit handle, or null on error.
 *
 * `basis_intervals`, `degree`, and `m` shape the spline basis and the
 * roughness penalty; `gamma` is the bridge exponent in (0,1).
 */
struct HfFit *hf_fit_new(const struct HfDataset *dataset,
                         size_t basis_intervals,
                         size_t degree,
                         size_t m,
                         double gamma,
                         const double *kappa_grid,
                         size_t kappa_len,
                         const double *lambda_grid,
                         size_t lambda_len);

/**
 * Releases a fit handle. Null is ignored.
 */
void hf_fit_free(struct HfFit *fit);

/**
 * Estimated history length (a knot of the fitting basis); NaN if `fit`
 * is null.
 */
double hf_fit_delta_hat(const struct HfFit *fit);

/**
 * 1-based cutoff index; 0 if `fit` is null.
 */
size_t hf_fit_j0(const struct HfFit *fit);

/**
 * Selected roughness penalty level; NaN if `fit` is null.
 */
double hf_fit_kappa(const struct HfFit *fit);

/**
 * Selected sparsity penalty level; NaN if `fit` is null.
 */
double hf_fit_lambda(const struct HfFit *fit);

/**
 * BIC of the selected fit; NaN if `fit` is null.
 */
double hf_fit_bic(const struct HfFit *fit);

/**
 * Number of spline coefficients; 0 if `fit` is null.
 */
size_t hf_fit_coefficient_count(const struct HfFit *fit);

/**
 * Copies the spline coefficients into `out` (capacity `cap`).
 */
enum HfStatus hf_fit_coefficients(const struct HfFit *fit, double *out, size_t cap);

/**
 * Evaluates the fitted coefficient function at `t`, writing to `out`.
 */
enum HfStatus hf_fit_eval(const struct HfFit *fit, double t, double *out);

/**
 * Residual-bootstrap pointwise band around the fit at its own tuning
 * values: `b_count` refits (at least 100) at confidence `level`,
 * evaluated at `grid_len` times, RNG streams derived from `seed`.
 * `lower` and `upper` must each hold `grid_len` values.
 */
enum HfStatus hf_bootstrap_band(const struct HfDataset *dataset,
                                const struct HfFit *fit,
                                size_t b_count,
                                double level,
                                const double *grid,
                                size_t grid_len,
                                uint64_t seed,
                                double *lower,
                                double *upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HISTFUN_H */
