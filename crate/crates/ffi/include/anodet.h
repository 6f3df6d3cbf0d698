#ifndef ANODET_H
#define ANODET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AnodetStatus {
  ANODET_STATUS_OK = 0,
  ANODET_STATUS_NULL_POINTER = 1,
  ANODET_STATUS_INVALID_ARGUMENT = 2,
  ANODET_STATUS_SHAPE = 3,
  ANODET_STATUS_IO = 4,
  ANODET_STATUS_FORMAT = 5,
  ANODET_STATUS_CHECKPOINT = 6,
  ANODET_STATUS_NUMERIC = 7,
  ANODET_STATUS_DEGENERATE_INPUT = 8,
  ANODET_STATUS_INSUFFICIENT_DATA = 9,
  ANODET_STATUS_PANIC = 10,
} AnodetStatus;

typedef enum AnodetMetric {
  ANODET_METRIC_SSIM = 0,
  ANODET_METRIC_PERCEPTUAL = 1,
} AnodetMetric;

// Opaque handle to a loaded translator.
typedef struct AnodetModel AnodetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failing call on this thread, or null. Valid until
// the next call into this library from the same thread.
const char *anodet_last_error_message(void);

// Static, NUL-terminated version string.
const char *anodet_version(void);

// Load a checkpoint written by `anodet train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
// Release the handle with [`anodet_model_free`].
enum AnodetStatus anodet_model_load(const char *path, struct AnodetModel **out);

// # Safety
// `model` must come from [`anodet_model_load`] and not be used afterwards.
// Null is ignored.
void anodet_model_free(struct AnodetModel *model);

// Style code length of the model.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum AnodetStatus anodet_model_style_dim(const struct AnodetModel *model, size_t *out);

// Single-pass reconstruction: content from `source`, style and decoder
// from `target` (0 = X, 1 = Y). `out` receives `3 * height * width` floats.
//
// # Safety
// `image` must hold `3 * height * width` floats and `out` as many writable
// slots; they may not overlap.
enum AnodetStatus anodet_reconstruct(const struct AnodetModel *model,
                                     const float *image,
                                     size_t height,
                                     size_t width,
                                     uint32_t source,
                                     uint32_t target,
                                     float *out);

// Anomaly score of one patch with default scorer settings (X content, Y
// style and decoder). `metric` is an [`AnodetMetric`] value. Higher means
// more anomalous.
//
// # Safety
// `image` must hold `3 * height * width` floats; `out_score` must be writable.
enum AnodetStatus anodet_score(const struct AnodetModel *model,
                               uint32_t metric,
                               const float *image,
                               size_t height,
                               size_t width,
                               double *out_score);

// Mean SSIM of two images of `channels x height x width` floats in `[-1, 1]`
// with an 11-tap Gaussian window.
//
// # Safety
// `a` and `b` must each hold `channels * height * width` floats.
enum AnodetStatus anodet_ssim(const float *a,
                              const float *b,
                              size_t channels,
                              size_t height,
                              size_t width,
                              double *out);

// Area under the ROC curve; `labels[i] != 0` marks an anomaly.
//
// # Safety
// `scores` and `labels` must each hold `n` elements.
enum AnodetStatus anodet_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Average precision with anomalies as the positive class.
//
// # Safety
// `scores` and `labels` must each hold `n` elements.
enum AnodetStatus anodet_average_precision(const double *scores,
                                           const uint8_t *labels,
                                           size_t n,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANODET_H */
