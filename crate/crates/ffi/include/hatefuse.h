#ifndef HATEFUSE_H
#define HATEFUSE_H

/* Generated by cbindgen from the hatefuse-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible entry point.
 */
typedef enum HfStatus {
  HF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  HF_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  HF_STATUS_INVALID_UTF8 = 2,
  /**
   * The checkpoint could not be read or decoded.
   */
  HF_STATUS_CHECKPOINT_ERROR = 3,
  /**
   * Inference failed (unreadable image, missing text, shape error).
   */
  HF_STATUS_PREDICTION_ERROR = 4,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  HF_STATUS_INTERNAL_ERROR = 5,
} HfStatus;

/**
 * Opaque classifier handle.
 */
typedef struct HfModel HfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Never NULL; empty
 * when no failure has occurred. Valid until the next failing call on the
 * same thread.
 */
const char *hf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * Load a trained checkpoint and return an owned model handle in `out`.
 *
 * # Safety
 * `checkpoint_path` must be a NUL-terminated string and `out` a valid
 * pointer; on success `*out` must eventually be released with
 * [`hf_model_free`].
 */
enum HfStatus hf_model_load(const char *checkpoint_path, struct HfModel **out);

/**
 * Release a handle returned by [`hf_model_load`]. NULL is a no-op.
 *
 * # Safety
 * `model` must be NULL or a pointer previously returned by
 * [`hf_model_load`] that has not been freed.
 */
void hf_model_free(struct HfModel *model);

/**
 * Classify one image with its extracted text.
 *
 * `ocr_text` is the text recovered from the image (the caller runs OCR, or
 * passes an empty string for a text-free image). On success `out_label`
 * holds 0 (no hate speech) or 1 (hate speech) and `out_confidence` the
 * winning class probability in [0.5, 1].
 *
 * # Safety
 * `model` must be a live handle from [`hf_model_load`]; string arguments
 * must be NUL-terminated; `out_label` and `out_confidence` must be valid
 * writable pointers.
 */
enum HfStatus hf_model_predict(struct HfModel *model,
                               const char *image_path,
                               const char *ocr_text,
                               int *out_label,
                               double *out_confidence);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HATEFUSE_H */
