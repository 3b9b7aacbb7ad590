#ifndef AGREEKIT_H
#define AGREEKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2 to 4 match the command-line exit
 * codes for the same failure.
 */
typedef enum AkStatus {
  AK_STATUS_OK = 0,
  /**
   * A required pointer was null or a length was inconsistent.
   */
  AK_STATUS_INVALID_ARGUMENT = 1,
  AK_STATUS_INPUT = 2,
  AK_STATUS_CAPABILITY = 3,
  AK_STATUS_DIVERGENCE = 4,
  /**
   * A log file failed to decode (bad magic, version, CRC or dimensions).
   */
  AK_STATUS_FORMAT = 5,
  AK_STATUS_IO = 6,
  /**
   * A panic was caught at the boundary.
   */
  AK_STATUS_INTERNAL = 7,
} AkStatus;

/**
 * Opaque label set.
 */
typedef struct AkLabels AkLabels;

/**
 * Opaque prediction log.
 */
typedef struct AkLog AkLog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ak_version(void);

/**
 * Length in bytes (without terminator) of the calling thread's last error.
 */
size_t ak_last_error_length(void);

/**
 * Copy the last error, truncated and NUL-terminated, into `buf` of
 * `capacity` bytes. Returns the untruncated length.
 *
 * # Safety
 * `buf` must be null or point to `capacity` writable bytes.
 */
size_t ak_last_error_message(char *buf, size_t capacity);

/**
 * Build a log from flat arrays. `hard` holds `n*k*t` class indices in
 * `[network][checkpoint][example]` order; `soft` is null or holds
 * `n*k*t*c` probabilities in the same order with classes innermost.
 * Checkpoint `e` is `ckpt_num[e] / ckpt_den[e]` epochs.
 *
 * # Safety
 * Every non-null pointer must reference the stated number of elements and
 * `out` must be writable.
 */
enum AkStatus ak_log_new(size_t n,
                         size_t k,
                         size_t t,
                         size_t c,
                         const uint32_t *ckpt_num,
                         const uint32_t *ckpt_den,
                         const uint32_t *hard,
                         const float *soft,
                         struct AkLog **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AkStatus ak_log_read(const char *path, struct AkLog **out);

/**
 * # Safety
 * `log` must be a live handle and `path` a NUL-terminated string.
 */
enum AkStatus ak_log_write(const struct AkLog *log, const char *path);

/**
 * Release a log handle. Null is ignored.
 *
 * # Safety
 * `log` must be null or a handle not yet freed.
 */
void ak_log_free(struct AkLog *log);

/**
 * Dimensions of a log; any output pointer may be null.
 *
 * # Safety
 * `log` must be a live handle; non-null outputs must be writable.
 */
enum AkStatus ak_log_dims(const struct AkLog *log, size_t *n, size_t *k, size_t *t, size_t *c);

/**
 * # Safety
 * `labels` must reference `len` elements (or be null with `len == 0`) and
 * `out` must be writable.
 */
enum AkStatus ak_labels_new(const uint32_t *labels,
                            size_t len,
                            size_t num_classes,
                            struct AkLabels **out);

/**
 * Release a label handle. Null is ignored.
 *
 * # Safety
 * `labels` must be null or a handle not yet freed.
 */
void ak_labels_free(struct AkLabels *labels);

/**
 * Majority vote at checkpoint position `checkpoint`; writes `t` classes.
 *
 * # Safety
 * `log` must be a live handle and `out` hold `t` writable elements.
 */
enum AkStatus ak_epoch_vote(const struct AkLog *log, size_t checkpoint, uint32_t *out);

/**
 * Max-agreement prediction over the checkpoint positions in `epochs`
 * (strictly increasing), or over every checkpoint when `epochs_len` is 0.
 * Writes `t` classes.
 *
 * # Safety
 * `log` must be a live handle, `epochs` reference `epochs_len` elements and
 * `out` hold `t` writable elements.
 */
enum AkStatus ak_map_predict(const struct AkLog *log,
                             const size_t *epochs,
                             size_t epochs_len,
                             uint32_t *out);

/**
 * Agreement margin over every checkpoint of the final-checkpoint vote;
 * writes `t` margins and, when `correct` is non-null, `t` flags (1 when
 * the final vote matches the label).
 *
 * # Safety
 * Handles must be live; `margins` (and non-null `correct`) must hold `t`
 * writable elements.
 */
enum AkStatus ak_agr_margin(const struct AkLog *log,
                            const struct AkLabels *labels,
                            double *margins,
                            uint8_t *correct);

/**
 * Fraction of `preds` equal to the labels.
 *
 * # Safety
 * `preds` must reference `len` elements, `labels` be live, `out` writable.
 */
enum AkStatus ak_accuracy(const uint32_t *preds,
                          size_t len,
                          const struct AkLabels *labels,
                          double *out);

/**
 * `k` evenly spaced checkpoint positions out of `total`, ending at the last.
 *
 * # Safety
 * `out` must hold `k` writable elements.
 */
enum AkStatus ak_subsample_epochs(size_t total, size_t k, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGREEKIT_H */
