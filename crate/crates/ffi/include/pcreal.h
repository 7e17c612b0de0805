#ifndef PCREAL_H
#define PCREAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PcrealStatus {
  PCREAL_STATUS_OK = 0,
  PCREAL_STATUS_NULL_POINTER = 1,
  PCREAL_STATUS_INVALID_ARGUMENT = 2,
  PCREAL_STATUS_IO = 3,
  PCREAL_STATUS_MALFORMED = 4,
  PCREAL_STATUS_EMPTY = 5,
  PCREAL_STATUS_UNKNOWN_KEY = 6,
  PCREAL_STATUS_SHAPE = 7,
  PCREAL_STATUS_BUFFER_TOO_SMALL = 8,
  PCREAL_STATUS_INTERNAL = 9,
} PcrealStatus;

/**
 * A point cloud.
 */
typedef struct PcrealCloud PcrealCloud;

/**
 * Trained (or freshly initialised) metric network.
 */
typedef struct PcrealModel PcrealModel;

/**
 * Per-query and per-scene scores of one cloud.
 */
typedef struct PcrealScores PcrealScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *pcreal_version(void);

/**
 * Message of the last error on this thread, or null. Valid until the next
 * call into the library on the same thread.
 */
const char *pcreal_last_error_message(void);

/**
 * Byte offset of the last malformed-input error on this thread, or -1.
 */
int64_t pcreal_last_error_offset(void);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PcrealStatus pcreal_model_load(const char *path, struct PcrealModel **out);

/**
 * Untrained model with the default architecture; every head starts at the
 * uniform distribution.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcrealStatus pcreal_model_new(uint64_t seed, struct PcrealModel **out);

/**
 * Write the model (without optimizer state) as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum PcrealStatus pcreal_model_save(const struct PcrealModel *model, const char *path);

/**
 * Number of trainable parameters, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
uint64_t pcreal_model_parameter_count(const struct PcrealModel *model);

/**
 * # Safety
 * `model` must be null or come from this library and not be used again.
 */
void pcreal_model_free(struct PcrealModel *model);

/**
 * Cloud from `n` points stored as `x0 y0 z0 x1 …`.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles (or be null with `n == 0`).
 */
enum PcrealStatus pcreal_cloud_from_xyz(const double *xyz, size_t n, struct PcrealCloud **out);

/**
 * Load a cloud: `.xyz`/`.txt` ASCII, `.bin` 4-column float32 (intensity
 * dropped), anything else 3-column float32.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum PcrealStatus pcreal_cloud_load(const char *path, struct PcrealCloud **out);

/**
 * Sample `index` of dataset `dataset` of the standard suite.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcrealStatus pcreal_cloud_generate(uint32_t dataset,
                                        uint64_t seed,
                                        uint64_t index,
                                        struct PcrealCloud **out);

/**
 * # Safety
 * `cloud` must be null or come from this library.
 */
size_t pcreal_cloud_len(const struct PcrealCloud *cloud);

/**
 * Copy up to `capacity` points (`3 * capacity` doubles) into `xyz`.
 *
 * # Safety
 * `xyz` must have room for `3 * capacity` doubles.
 */
enum PcrealStatus pcreal_cloud_points(const struct PcrealCloud *cloud,
                                      double *xyz,
                                      size_t capacity);

/**
 * # Safety
 * `cloud` must be null or come from this library and not be used again.
 */
void pcreal_cloud_free(struct PcrealCloud *cloud);

/**
 * Score a cloud (dropout off).
 *
 * # Safety
 * Handles must come from this library; `out` must be a valid pointer.
 */
enum PcrealStatus pcreal_score(const struct PcrealModel *model,
                               const struct PcrealCloud *cloud,
                               struct PcrealScores **out);

/**
 * Scene probabilities (Real, Synthetic, Misc) into `out[0..3]`.
 *
 * # Safety
 * `out` must have room for 3 doubles.
 */
enum PcrealStatus pcreal_scores_scene(const struct PcrealScores *scores, double *out);

/**
 * # Safety
 * `scores` must be null or come from this library.
 */
size_t pcreal_scores_query_count(const struct PcrealScores *scores);

/**
 * Query coordinates, 3 doubles per query.
 *
 * # Safety
 * `xyz` must have room for `3 * capacity` doubles.
 */
enum PcrealStatus pcreal_scores_queries(const struct PcrealScores *scores,
                                        double *xyz,
                                        size_t capacity);

/**
 * Query probabilities, 3 doubles per query.
 *
 * # Safety
 * `probs` must have room for `3 * capacity` doubles.
 */
enum PcrealStatus pcreal_scores_probs(const struct PcrealScores *scores,
                                      double *probs,
                                      size_t capacity);

/**
 * Scores as JSON. Release the string with [`pcreal_string_free`].
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcrealStatus pcreal_scores_to_json(const struct PcrealScores *scores, char **out);

/**
 * Per-point probabilities of `cloud` interpolated from `scores`, 3 doubles
 * per point.
 *
 * # Safety
 * `probs` must have room for `3 * capacity` doubles.
 */
enum PcrealStatus pcreal_anomaly_map(const struct PcrealScores *scores,
                                     const struct PcrealCloud *cloud,
                                     double *probs,
                                     size_t capacity);

/**
 * # Safety
 * `scores` must be null or come from this library and not be used again.
 */
void pcreal_scores_free(struct PcrealScores *scores);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void pcreal_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCREAL_H */
