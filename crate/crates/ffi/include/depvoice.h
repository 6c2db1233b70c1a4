#ifndef DEPVOICE_H
#define DEPVOICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum DvStatus {
  DV_STATUS_OK = 0,
  DV_STATUS_NULL_POINTER = 1,
  DV_STATUS_INVALID_ARGUMENT = 2,
  DV_STATUS_IO = 3,
  DV_STATUS_MALFORMED = 4,
  DV_STATUS_CHECKSUM = 5,
  DV_STATUS_VERSION = 6,
  DV_STATUS_SHAPE = 7,
  DV_STATUS_BUFFER_TOO_SMALL = 8,
  DV_STATUS_PANIC = 9,
} DvStatus;

/**
 * Rendered spectrogram image, RGB in `[0, 1]`.
 */
typedef struct DvImage DvImage;

/**
 * Loaded classifier.
 */
typedef struct DvModel DvModel;

/**
 * Binary classification metrics. `precision` and `recall` are only
 * meaningful when the matching `has_*` flag is 1.
 */
typedef struct DvMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  uint8_t has_precision;
  uint8_t has_recall;
} DvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dv_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * including the terminator, or 0 when there is no pending error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dv_last_error_message(char *buf, size_t len);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DvStatus dv_model_load(const char *path, struct DvModel **out);

/**
 * Writes the model to a checkpoint file.
 *
 * # Safety
 * `model` must come from `dv_model_load`; `path` must be NUL-terminated.
 */
enum DvStatus dv_model_save(const struct DvModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or come from `dv_model_load`, and not be used afterwards.
 */
void dv_model_free(struct DvModel *model);

/**
 * Square input side length expected by the model; 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t dv_model_input_size(const struct DvModel *model);

/**
 * Number of output classes; 0 for null.
 *
 * # Safety
 * `model` must be null or a live model handle.
 */
size_t dv_model_num_classes(const struct DvModel *model);

/**
 * Reads a PCM16 WAV file, cuts the window `[offset_s, offset_s + window_s)`
 * and renders it to a `size` x `size` spectrogram image.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum DvStatus dv_wav_to_image(const char *path,
                              double offset_s,
                              double window_s,
                              size_t size,
                              struct DvImage **out);

/**
 * Renders mono samples in `[-1, 1]` the same way as `dv_wav_to_image`.
 *
 * # Safety
 * `samples` must point to `n` readable floats; `out` must be writable.
 */
enum DvStatus dv_samples_to_image(const float *samples,
                                  size_t n,
                                  uint32_t sample_rate_hz,
                                  double offset_s,
                                  double window_s,
                                  size_t size,
                                  struct DvImage **out);

/**
 * Image height and width.
 *
 * # Safety
 * `image` must be a live image handle; `height` and `width` writable.
 */
enum DvStatus dv_image_dims(const struct DvImage *image, size_t *height, size_t *width);

/**
 * Releases an image. Null is ignored.
 *
 * # Safety
 * `image` must be null or come from an image constructor, and not be used afterwards.
 */
void dv_image_free(struct DvImage *image);

/**
 * Class probabilities averaged over the image and `k` augmented views
 * (`k = 0` is a plain prediction). Writes `num_classes` floats to `probs`;
 * index 0 is non-depressed, 1 is depressed.
 *
 * # Safety
 * Handles must be live; `probs` must point to `len` writable floats.
 */
enum DvStatus dv_predict_tta(const struct DvModel *model,
                             const struct DvImage *image,
                             size_t k,
                             uint64_t aug_seed,
                             float *probs,
                             size_t len);

/**
 * `dv_predict_tta` with no augmented views.
 *
 * # Safety
 * As for `dv_predict_tta`.
 */
enum DvStatus dv_predict(const struct DvModel *model,
                         const struct DvImage *image,
                         float *probs,
                         size_t len);

/**
 * Metrics for a confusion matrix with depressed as the positive class.
 *
 * # Safety
 * `out` must be writable.
 */
enum DvStatus dv_metrics(uint64_t tp,
                         uint64_t fp,
                         uint64_t fn_,
                         uint64_t tn,
                         struct DvMetrics *out);

/**
 * SGDR learning rate at global `step` (`lr_min = lr_max / 100`).
 *
 * # Safety
 * `out` must be writable.
 */
enum DvStatus dv_sgdr_lr(double lr_max,
                         size_t cycle_len,
                         size_t cycle_mult,
                         size_t steps_per_epoch,
                         size_t step,
                         double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPVOICE_H */
