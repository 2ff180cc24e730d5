#ifndef DIFFLOAD_H
#define DIFFLOAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DL_OK 0

#define DL_ERR_NULL 1

#define DL_ERR_DOMAIN 2

#define DL_ERR_CONFIG 3

#define DL_ERR_SHAPE 4

#define DL_ERR_DATA 5

#define DL_ERR_IO 6

#define DL_ERR_NONFINITE 7

#define DL_ERR_PANIC 8

#define DL_FAMILY_CAUCHY 1

#define DL_FAMILY_GAUSSIAN 2

/**
 * Opaque trained model.
 */
typedef struct DlModel DlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dl_last_error_message(void);

/**
 * Cauchy negative log-likelihood without the constant `ln pi`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_cauchy_nll(double y, double loc, double scale, double *out);

/**
 * Gaussian negative log-likelihood without the constant `ln(2 pi)/2`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_gaussian_nll(double y, double loc, double scale, double *out);

/**
 * Quantile at probability `p` of the given family.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_stable_quantile(int32_t family_code, double p, double loc, double scale, double *out);

/**
 * Scale of the sum of two independent stable variables with index `alpha`
 * (1 or 2).
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_combine_scales(double alpha, double scale1, double scale2, double *out);

/**
 * Quantile-grid CRPS of outcome `y` under the given predictive law, on the
 * default 99-point grid.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_crps_quantile(int32_t family_code, double y, double loc, double scale, double *out);

/**
 * Winkler score of outcome `y` for the central interval `[lower, upper]`
 * of nominal coverage `coverage`.
 *
 * # Safety
 * `out` must be null or valid for writing one `double`.
 */
int32_t dl_winkler(double y, double lower, double upper, double coverage, double *out);

/**
 * Loads a checkpoint. Release the handle with [`dl_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writing
 * one pointer.
 */
int32_t dl_model_load(const char *path, struct DlModel **out);

/**
 * Releases a handle from [`dl_model_load`]; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void dl_model_free(struct DlModel *model);

/**
 * Forecast length of one window.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid for one `size_t`.
 */
int32_t dl_model_horizon(const struct DlModel *model, size_t *out);

/**
 * Forecasts the test split of the series in `data_csv` with `samples`
 * stochastic passes and writes the forecast CSV to `out_csv`. A `coverage`
 * in (0, 1) is used directly; any other value selects it on the validation
 * split. Splits follow the default ratios and evaluation stride.
 *
 * # Safety
 * `model` must be a live handle; both paths NUL-terminated strings;
 * `n_steps` null or valid for one `size_t`.
 */
int32_t dl_model_forecast(const struct DlModel *model,
                          const char *data_csv,
                          size_t samples,
                          uint64_t seed,
                          double coverage,
                          const char *out_csv,
                          size_t *n_steps);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFLOAD_H */
