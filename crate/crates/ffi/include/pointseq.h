#ifndef POINTSEQ_H
#define POINTSEQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsOrdering {
  PS_ORDERING_NIMBA = 0,
  PS_ORDERING_AXIS_TRIPLE = 1,
  PS_ORDERING_YSORT = 2,
  PS_ORDERING_IDENTITY = 3,
} PsOrdering;

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_EMPTY_INPUT = 3,
  PS_STATUS_NON_FINITE = 4,
  PS_STATUS_SHAPE_MISMATCH = 5,
  PS_STATUS_IO = 6,
  PS_STATUS_PARSE = 7,
  PS_STATUS_NUMERICAL = 8,
  PS_STATUS_BUFFER_TOO_SMALL = 9,
  PS_STATUS_PANIC = 10,
} PsStatus;

/**
 * A point cloud.
 */
typedef struct PsCloud PsCloud;

/**
 * A trained classifier.
 */
typedef struct PsModel PsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `ps_*` call on the same thread.
 */
const char *ps_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ps_version(void);

/**
 * Builds a cloud from `n_points` interleaved `x, y, z` doubles.
 *
 * # Safety
 * `xyz` must point to `3 * n_points` readable doubles and `out` must be
 * writable.
 */
enum PsStatus ps_cloud_new(const double *xyz, size_t n_points, struct PsCloud **out);

/**
 * Reads a whitespace-separated `.xyz` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum PsStatus ps_cloud_load_xyz(const char *path, struct PsCloud **out);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t ps_cloud_len(const struct PsCloud *cloud);

/**
 * Copies the points as interleaved doubles into `out` (capacity in doubles).
 *
 * # Safety
 * `cloud` must be a live handle and `out` must hold `capacity` doubles.
 */
enum PsStatus ps_cloud_points(const struct PsCloud *cloud, double *out, size_t capacity);

/**
 * Centers the cloud on its centroid and scales it into the unit sphere,
 * in place.
 *
 * # Safety
 * `cloud` must be a live handle.
 */
enum PsStatus ps_cloud_normalize(struct PsCloud *cloud);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void ps_cloud_free(struct PsCloud *cloud);

/**
 * Farthest-point sampling from point 0; writes `n_c` point indices.
 *
 * # Safety
 * `cloud` must be a live handle and `out_indices` must hold `n_c` values.
 */
enum PsStatus ps_fps(const struct PsCloud *cloud, size_t n_c, size_t *out_indices);

/**
 * Sequence length `ordering` produces for `n_c` centers.
 */
size_t ps_ordering_len(enum PsOrdering ordering, size_t n_c);

/**
 * Serializes `n_c` centers (interleaved doubles). Writes
 * `ps_ordering_len(ordering, n_c)` positions into `out_order`; `r` is the
 * proximity threshold and only matters for `Nimba`.
 *
 * # Safety
 * `centers` must hold `3 * n_c` doubles and `out_order` must hold
 * `capacity` values.
 */
enum PsStatus ps_reorder(const double *centers,
                         size_t n_c,
                         enum PsOrdering ordering,
                         double r,
                         size_t *out_order,
                         size_t capacity);

/**
 * Loads a checkpoint written by `pointseq train --checkpoint-out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum PsStatus ps_model_load(const char *path, struct PsModel **out);

/**
 * Number of output classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ps_model_num_classes(const struct PsModel *model);

/**
 * Number of points a cloud needs before classification (clouds are used
 * as given, so pass one sampled to this size). 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ps_model_num_points(const struct PsModel *model);

/**
 * Classifies one cloud. Writes the predicted label and, when `out_logits`
 * is non-null, `num_classes` logits.
 *
 * # Safety
 * Handles must be live; `out_label` must be writable; `out_logits` must be
 * null or hold `logits_capacity` doubles.
 */
enum PsStatus ps_model_classify(const struct PsModel *model,
                                const struct PsCloud *cloud,
                                size_t *out_label,
                                double *out_logits,
                                size_t logits_capacity);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ps_model_free(struct PsModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTSEQ_H */
