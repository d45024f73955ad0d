#ifndef CANPREDICT_H
#define CANPREDICT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CanpStatus {
  CANP_STATUS_OK = 0,
  CANP_STATUS_NULL_POINTER = 1,
  CANP_STATUS_INVALID_ARGUMENT = 2,
  CANP_STATUS_PARSE_ERROR = 3,
  CANP_STATUS_IO_ERROR = 4,
  CANP_STATUS_MODEL_ERROR = 5,
  CANP_STATUS_NUMERIC_ERROR = 6,
  CANP_STATUS_PANIC = 7,
} CanpStatus;

/**
 * Streaming detector for one AID: a trained model plus its error model.
 */
typedef struct CanpDetector CanpDetector;

/**
 * One classic CAN frame. Only the first `dlc` bytes of `data` are used.
 */
typedef struct CanpFrame {
  double timestamp;
  uint16_t aid;
  uint8_t dlc;
  uint8_t data[8];
} CanpFrame;

typedef struct CanpScore {
  double timestamp;
  uint16_t aid;
  double e;
  double z;
  double p;
} CanpScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *canp_version(void);

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *canp_last_error(void);

/**
 * Parses one candump line such as `(1.000000) can0 0D0#1122`.
 *
 * # Safety
 * `line` must be a NUL-terminated string and `out` a writable frame.
 */
enum CanpStatus canp_parse_candump_line(const char *line, struct CanpFrame *out);

/**
 * Loads a model file and an error-model file produced by `canpredict train`.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable. On success
 * `*out` owns a detector that must be released with [`canp_detector_free`].
 */
enum CanpStatus canp_detector_open(const char *model_path,
                                   const char *errmodel_path,
                                   uint16_t aid,
                                   struct CanpDetector **out);

/**
 * # Safety
 * `det` must be null or a handle from [`canp_detector_open`] not yet freed.
 */
void canp_detector_free(struct CanpDetector *det);

/**
 * Context length: frames needed before the first score.
 *
 * # Safety
 * `det` must be a live handle or null (returns 0).
 */
uint32_t canp_detector_window(const struct CanpDetector *det);

/**
 * Feeds one frame. Frames for other AIDs are ignored. `*scored` is set to
 * 1 and `*out` filled once the context window is full, otherwise 0.
 *
 * # Safety
 * `det` must be a live handle; `frame`, `out` and `scored` must be valid.
 */
enum CanpStatus canp_detector_push(struct CanpDetector *det,
                                   const struct CanpFrame *frame,
                                   struct CanpScore *out,
                                   uint8_t *scored);

/**
 * Clears the buffered context.
 *
 * # Safety
 * `det` must be a live handle.
 */
enum CanpStatus canp_detector_reset(struct CanpDetector *det);

/**
 * Scores a raw prediction error against the detector's error model.
 *
 * # Safety
 * `det` must be a live handle; `z` and `p` must be writable.
 */
enum CanpStatus canp_detector_p_value(const struct CanpDetector *det,
                                      double e,
                                      double *z,
                                      double *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CANPREDICT_H */
