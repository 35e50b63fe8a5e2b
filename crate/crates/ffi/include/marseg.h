#ifndef MARSEG_H
#define MARSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MarsegStatus {
  MARSEG_STATUS_OK = 0,
  /*
   A required pointer was null.
   */
  MARSEG_STATUS_NULL_POINTER = 1,
  /*
   An argument was out of range or inconsistent with the others.
   */
  MARSEG_STATUS_INVALID_ARGUMENT = 2,
  /*
   Input data was malformed, missing or mismatched.
   */
  MARSEG_STATUS_DATA_ERROR = 3,
  /*
   Output buffer length does not match the required length.
   */
  MARSEG_STATUS_BUFFER_SIZE = 4,
  MARSEG_STATUS_RUNTIME_ERROR = 5,
  /*
   A panic was caught at the boundary.
   */
  MARSEG_STATUS_PANIC = 6,
} MarsegStatus;

/*
 Opaque model handle.
 */
typedef struct MarsegModel MarsegModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null after a success.
 The pointer stays valid until the next marseg call on the same thread.
 */
const char *marseg_last_error(void);

/*
 Composite code `semantic + C * moving`.

 # Safety
 `out` must point to writable storage for one `uint16_t`.
 */
enum MarsegStatus marseg_compose_label(uint16_t semantic, bool moving, uint16_t *out);

/*
 # Safety
 `semantic` and `moving` must point to writable storage.
 */
enum MarsegStatus marseg_decompose_label(uint16_t code, uint16_t *semantic, bool *moving);

/*
 Pillarizes `n` points (`xyzi`, 4 doubles each) onto a centered `height` x `width` grid
 of `cell`-meter pillars. Writes `3 * height * width` doubles, channel-major.

 # Safety
 `xyzi` must hold `4 * n` doubles and `out` must hold `out_len` doubles.
 */
enum MarsegStatus marseg_pillarize(const double *xyzi,
                                   size_t n,
                                   size_t height,
                                   size_t width,
                                   double cell,
                                   double *out,
                                   size_t out_len);

/*
 Writes a synthetic dataset of `scenes` sequences with `frames` frames and
 `points_per_frame` points each, over a square scene of half-width `extent` meters.

 # Safety
 `root` must be a nul-terminated path.
 */
enum MarsegStatus marseg_generate_dataset(const char *root,
                                          uint64_t seed,
                                          size_t scenes,
                                          size_t frames,
                                          size_t points_per_frame,
                                          double extent);

/*
 Loads a checkpoint and its manifest. Free the handle with [`marseg_model_free`].

 # Safety
 `checkpoint` must be a nul-terminated path and `out` writable.
 */
enum MarsegStatus marseg_model_load(const char *checkpoint, struct MarsegModel **out);

/*
 # Safety
 `model` must come from [`marseg_model_load`] and not be used afterwards. Null is ignored.
 */
void marseg_model_free(struct MarsegModel *model);

/*
 Frames per sample the model expects.

 # Safety
 `model` must be a live handle and `out` writable.
 */
enum MarsegStatus marseg_model_frames(const struct MarsegModel *model, size_t *out);

/*
 Predicts composite codes for the last frame of a `k`-frame window.

 `xyzi` holds every frame's points back to back, 4 doubles per point, with `counts[i]`
 points in frame `i`. `poses` holds `k` sensor-to-world poses as row-major 3x4 `[R | t]`.
 `out` receives one code per point of the last frame; `out_len` must equal `counts[k - 1]`.

 # Safety
 All pointers must be valid for the lengths described above.
 */
enum MarsegStatus marseg_model_predict(const struct MarsegModel *model,
                                       const double *xyzi,
                                       const size_t *counts,
                                       const double *poses,
                                       size_t k,
                                       uint16_t *out,
                                       size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARSEG_H */
