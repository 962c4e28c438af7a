#ifndef SFNET_H
#define SFNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SfnetStatus {
  SFNET_STATUS_OK = 0,
  SFNET_STATUS_NULL_POINTER = 1,
  SFNET_STATUS_INVALID_ARGUMENT = 2,
  SFNET_STATUS_SHAPE = 3,
  SFNET_STATUS_CONFIG = 4,
  SFNET_STATUS_IO = 5,
  SFNET_STATUS_CHECKPOINT = 6,
  SFNET_STATUS_NUMERIC = 7,
  SFNET_STATUS_PANIC = 8,
} SfnetStatus;

// Opaque model handle.
typedef struct SfnetModel SfnetModel;

// Classification metrics; undefined entries are NaN.
typedef struct SfnetMetrics {
  double acc;
  double sen;
  double spe;
  double f1;
} SfnetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread; empty after success.
// The pointer stays valid until the next call on this thread.
const char *sfnet_last_error(void);

// Build the desk-scale tiny model with seeded initialization.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SfnetStatus sfnet_model_new_tiny(uint64_t seed, struct SfnetModel **out);

// Build a model from a flat JSON config document.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum SfnetStatus sfnet_model_from_json(const char *config_json,
                                       uint64_t seed,
                                       struct SfnetModel **out);

// Load a checkpoint directory.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SfnetStatus sfnet_model_load(const char *path, struct SfnetModel **out);

// Write a checkpoint directory.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum SfnetStatus sfnet_model_save(const struct SfnetModel *model, const char *path);

// Release a handle. Null is accepted and ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void sfnet_model_free(struct SfnetModel *model);

// Trainable element count of the model.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum SfnetStatus sfnet_model_param_count(const struct SfnetModel *model, uint64_t *out);

// Input extent `[W, H, D]` expected by the model.
//
// # Safety
// `model` must be a live handle; `out` must point to three writable values.
enum SfnetStatus sfnet_model_input_extent(const struct SfnetModel *model, size_t *out);

// Evaluation-mode logits for `batch` volumes laid out `[N, C, W, H, D]`
// with the last axis fastest. `logits` receives `batch * num_classes`
// values and `logits_len` must equal that count.
//
// # Safety
// `input` must hold `batch * C * W * H * D` readable floats; `logits` must
// hold `logits_len` writable floats.
enum SfnetStatus sfnet_model_forward(const struct SfnetModel *model,
                                     const float *input,
                                     size_t batch,
                                     float *logits,
                                     size_t logits_len);

// Accuracy, sensitivity, specificity and F1 of a confusion table.
//
// # Safety
// `out` must be writable.
enum SfnetStatus sfnet_metrics(uint64_t tp,
                               uint64_t fn_,
                               uint64_t fp,
                               uint64_t tn,
                               struct SfnetMetrics *out);

// ROC AUC of class-1 scores against 0/1 labels.
//
// # Safety
// `scores` and `labels` must each hold `n` readable values; `out` must be
// writable.
enum SfnetStatus sfnet_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SFNET_H */
