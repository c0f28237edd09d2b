#ifndef CUEING_H
#define CUEING_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum CueingStatus {
  CUEING_STATUS_OK = 0,
  CUEING_STATUS_NULL_POINTER = 1,
  CUEING_STATUS_INVALID_ARGUMENT = 2,
  CUEING_STATUS_IO = 3,
  CUEING_STATUS_CHECKPOINT = 4,
  CUEING_STATUS_DIMENSION = 5,
  CUEING_STATUS_CONFIG = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  CUEING_STATUS_INTERNAL = 7,
} CueingStatus;

/*
 Opaque model handle.
 */
typedef struct CueingModel CueingModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null if none.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *cueing_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *cueing_version(void);

/*
 Create a freshly initialized model with default architecture at the given
 token count and input size.

 # Safety
 `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum CueingStatus cueing_model_new(size_t tokens,
                                   size_t width,
                                   size_t height,
                                   uint64_t seed,
                                   struct CueingModel **out);

/*
 Load a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CueingStatus cueing_model_load(const char *path, struct CueingModel **out);

/*
 # Safety
 `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum CueingStatus cueing_model_save(const struct CueingModel *model, const char *path);

/*
 Release a handle. Null is ignored.

 # Safety
 `model` must come from this library and must not be used afterwards.
 */
void cueing_model_free(struct CueingModel *model);

/*
 # Safety
 `model` must come from this library; the out pointers must be writable.
 */
enum CueingStatus cueing_model_shape(const struct CueingModel *model,
                                     size_t *tokens,
                                     size_t *width,
                                     size_t *height);

/*
 Number of parameters, optionally counting only the unfrozen ones.

 # Safety
 `model` must come from this library; `out` must be writable.
 */
enum CueingStatus cueing_model_param_count(const struct CueingModel *model,
                                           bool trainable_only,
                                           size_t *out);

/*
 Predict one gaze value per token for a planar RGB image of the model's input size.

 # Safety
 `rgb` must hold `3 * height * width` floats; `out_points` must hold `out_len` floats.
 */
enum CueingStatus cueing_model_predict(const struct CueingModel *model,
                                       const float *rgb,
                                       size_t height,
                                       size_t width,
                                       float *out_points,
                                       size_t out_len);

/*
 Render token predictions as a `height × width` gaze map blurred with `sigma`
 pixels (0 skips the blur).

 # Safety
 `points` must hold `n_points` floats; `out_map` must hold `height * width` floats.
 */
enum CueingStatus cueing_upsample(const float *points,
                                  size_t n_points,
                                  size_t height,
                                  size_t width,
                                  double sigma,
                                  float *out_map);

/*
 KL divergence (ground truth as reference) and Pearson correlation of two
 equally sized maps. `cc_defined` is false when either map is constant.

 # Safety
 `pred` and `gt` must each hold `height * width` floats; out pointers must be writable.
 */
enum CueingStatus cueing_pixel_metrics(const float *pred,
                                       const float *gt,
                                       size_t height,
                                       size_t width,
                                       double *kl,
                                       double *cc,
                                       bool *cc_defined);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CUEING_H */
