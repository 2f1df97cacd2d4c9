#ifndef JOINTSLU_H
#define JOINTSLU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum JsluStatus {
  JSLU_STATUS_OK = 0,
  JSLU_STATUS_NULL_POINTER = 1,
  JSLU_STATUS_INVALID_UTF8 = 2,
  // File could not be read.
  JSLU_STATUS_IO = 3,
  // Not a checkpoint, truncated, or written by another format version.
  JSLU_STATUS_CORRUPT = 4,
  // Bad argument, e.g. an empty sentence or an index out of range.
  JSLU_STATUS_INVALID_INPUT = 5,
  // The model produced a non-finite value.
  JSLU_STATUS_NUMERICAL = 6,
  // The model lacks the requested output (e.g. attention).
  JSLU_STATUS_UNSUPPORTED = 7,
  // Internal failure; the handle should be discarded.
  JSLU_STATUS_PANIC = 8,
} JsluStatus;

// Loaded checkpoint.
typedef struct JsluModel JsluModel;

// Tags, intent and attention for one sentence.
typedef struct JsluPrediction JsluPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *jslu_last_error(void);

// Library version as a static NUL-terminated string.
const char *jslu_version(void);

// Loads a checkpoint written by `jointslu train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum JsluStatus jslu_model_load(const char *path, struct JsluModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from [`jslu_model_load`] and not be used afterwards.
void jslu_model_free(struct JsluModel *model);

// Number of slot tags the model predicts (0 without a tag head).
//
// # Safety
// `model` must be null or a live handle.
size_t jslu_model_num_tags(const struct JsluModel *model);

// Number of intents (0 without an intent head).
//
// # Safety
// `model` must be null or a live handle.
size_t jslu_model_num_intents(const struct JsluModel *model);

// Tags and classifies one sentence of `n` tokens.
//
// # Safety
// `tokens` must point to `n` NUL-terminated strings; `out` must be writable.
enum JsluStatus jslu_predict(const struct JsluModel *model,
                             const char *const *tokens,
                             size_t n,
                             struct JsluPrediction **out);

// Releases a prediction; null is ignored.
//
// # Safety
// `pred` must come from [`jslu_predict`] and not be used afterwards.
void jslu_prediction_free(struct JsluPrediction *pred);

// Number of predicted tags (the sentence length, or 0 without a tag head).
//
// # Safety
// `pred` must be null or a live handle.
size_t jslu_prediction_num_tags(const struct JsluPrediction *pred);

// Tag of token `i`, or null when out of range. Owned by `pred`.
//
// # Safety
// `pred` must be null or a live handle.
const char *jslu_prediction_tag(const struct JsluPrediction *pred, size_t i);

// Predicted intent, or null without an intent head. Owned by `pred`.
//
// # Safety
// `pred` must be null or a live handle.
const char *jslu_prediction_intent(const struct JsluPrediction *pred);

// Copies the raw per-token attention weights into `buf` (capacity `cap`).
// `*len` receives the number of weights even when `buf` is too small, in
// which case nothing is copied and `InvalidInput` is returned.
//
// # Safety
// `buf` must hold `cap` floats (or be null with `cap == 0`); `len` must be
// writable.
enum JsluStatus jslu_prediction_attention(const struct JsluPrediction *pred,
                                          float *buf,
                                          size_t cap,
                                          size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JOINTSLU_H */
