#ifndef FLUXRNN_H
#define FLUXRNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum FluxStatus {
  FLUX_STATUS_OK = 0,
  FLUX_STATUS_NULL_POINTER = 1,
  FLUX_STATUS_INVALID_ARGUMENT = 2,
  FLUX_STATUS_IO = 3,
  FLUX_STATUS_BAD_CHECKPOINT = 4,
  FLUX_STATUS_SHAPE_MISMATCH = 5,
  FLUX_STATUS_INSUFFICIENT_DATA = 6,
  FLUX_STATUS_ZERO_RANGE = 7,
  FLUX_STATUS_NON_FINITE = 8,
  FLUX_STATUS_OTHER = 9,
  FLUX_STATUS_PANIC = 10,
} FluxStatus;

/**
 * Anomalies that define the low-tail threshold in [`flux_flag_extremes`].
 */
typedef enum FluxTail {
  FLUX_TAIL_FULL = 0,
  FLUX_TAIL_NEGATIVE_ONLY = 1,
} FluxTail;

/**
 * A loaded checkpoint. Create with [`flux_model_load`], release with
 * [`flux_model_free`].
 */
typedef struct FluxModel FluxModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *flux_last_error_message(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a model that must be released with
 * [`flux_model_free`]; on failure it is set to null.
 */
enum FluxStatus flux_model_load(const char *path, struct FluxModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`flux_model_load`] and not be used afterwards.
 */
void flux_model_free(struct FluxModel *model);

/**
 * Days per input window; 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t flux_model_window(const struct FluxModel *model);

/**
 * Features per day; 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
size_t flux_model_n_features(const struct FluxModel *model);

/**
 * Name of feature `index` in input order, or null when out of range. The
 * string lives as long as the model.
 *
 * # Safety
 * `model` must be null or a live model.
 */
const char *flux_model_feature_name(const struct FluxModel *model, size_t index);

/**
 * GPP for one window of raw (unstandardized) features laid out day-major:
 * `features[day * n_features + feature]`, `len == window * n_features`.
 *
 * # Safety
 * `features` must hold `len` doubles and `out` must be writable.
 */
enum FluxStatus flux_model_predict(const struct FluxModel *model,
                                   const double *features,
                                   size_t len,
                                   double *out);

/**
 * GPP for `n_windows` consecutive windows in the layout of
 * [`flux_model_predict`]; `len == n_windows * window * n_features`.
 *
 * # Safety
 * `features` must hold `len` doubles and `out` room for `n_windows`.
 */
enum FluxStatus flux_model_predict_batch(const struct FluxModel *model,
                                         const double *features,
                                         size_t len,
                                         double *out,
                                         size_t n_windows);

/**
 * Daily mean clear-sky shortwave radiation (W m⁻²) at `latitude_deg` on day
 * of year `doy` (1..=366) with broadband transmittance in (0, 1].
 *
 * # Safety
 * `out` must be writable.
 */
enum FluxStatus flux_clearsky_mean(double latitude_deg,
                                   uint32_t doy,
                                   double transmittance,
                                   double *out);

/**
 * RMSE of `preds` against `obs`, divided by the range of `obs`.
 *
 * # Safety
 * `preds` and `obs` must hold `n` doubles and `out` must be writable.
 */
enum FluxStatus flux_nrmse(const double *preds, const double *obs, size_t n, double *out);

/**
 * Flags low-tail anomaly runs of at least `min_run` consecutive days.
 * NaN anomalies are missing days; they are never flagged and break runs.
 * `tail` is a [`FluxTail`] value. Writes 1 or 0 per day to `flags`, and
 * the threshold to `threshold` when it is non-null (NaN when no anomaly is
 * negative in negative-only mode).
 *
 * # Safety
 * `anomalies` must hold `n` doubles, `flags` room for `n` bytes, and
 * `threshold` must be null or writable.
 */
enum FluxStatus flux_flag_extremes(const double *anomalies,
                                   size_t n,
                                   double quantile,
                                   size_t min_run,
                                   uint32_t tail,
                                   uint8_t *flags,
                                   double *threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLUXRNN_H */
