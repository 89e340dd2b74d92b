#ifndef OWRLAB_H
#define OWRLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Label written by [`owrlab_model_classify`] for rejected samples.
 */
#define OWRLAB_UNKNOWN -1

typedef enum OwrlabStatus {
  OWRLAB_STATUS_OK = 0,
  /**
   * A null pointer, bad UTF-8 or an out-of-range index.
   */
  OWRLAB_STATUS_INVALID_ARGUMENT = 1,
  OWRLAB_STATUS_CONFIG = 2,
  OWRLAB_STATUS_PARSE = 3,
  OWRLAB_STATUS_IO = 4,
  OWRLAB_STATUS_DIMENSION = 5,
  OWRLAB_STATUS_CONTRACT = 6,
  OWRLAB_STATUS_NUMERIC = 7,
  /**
   * The library panicked; the handle arguments should not be reused.
   */
  OWRLAB_STATUS_INTERNAL = 8,
} OwrlabStatus;

/**
 * Experiment configuration.
 */
typedef struct OwrlabConfig OwrlabConfig;

/**
 * A model trained through a full incremental schedule.
 */
typedef struct OwrlabModel OwrlabModel;

/**
 * Rows of a finished run.
 */
typedef struct OwrlabRun OwrlabRun;

/**
 * One results row: a (test domain, seed, step) of a method and plugin.
 */
typedef struct OwrlabRow {
  /**
   * Index into the configured methods.
   */
  uint32_t method_index;
  /**
   * Index into the configured plugins.
   */
  uint32_t plugin_index;
  uint32_t train_domain;
  uint32_t test_domain;
  uint64_t seed;
  uint32_t step;
  double closed_world_no_reject;
  double closed_world_with_reject;
  double open_set_acc;
  double owr_h;
} OwrlabRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *owrlab_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *owrlab_last_error(void);

/**
 * Parses a configuration from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OwrlabStatus owrlab_config_from_toml(const char *toml, struct OwrlabConfig **out);

/**
 * Reads a configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OwrlabStatus owrlab_config_load(const char *path, struct OwrlabConfig **out);

/**
 * Replaces the seed list.
 *
 * # Safety
 * `seeds` must point to `len` readable values.
 */
enum OwrlabStatus owrlab_config_set_seeds(struct OwrlabConfig *cfg,
                                          const uint64_t *seeds,
                                          size_t len);

/**
 * Sets the directory runs write into.
 *
 * # Safety
 * `dir` must be a NUL-terminated string.
 */
enum OwrlabStatus owrlab_config_set_output_dir(struct OwrlabConfig *cfg, const char *dir);

/**
 * Checks every precondition of a run.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum OwrlabStatus owrlab_config_validate(const struct OwrlabConfig *cfg);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void owrlab_config_free(struct OwrlabConfig *cfg);

/**
 * Runs every method, plugin and seed with `jobs` workers, writing the
 * manifest and results under the configured output directory.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum OwrlabStatus owrlab_run(const struct OwrlabConfig *cfg, uint32_t jobs, struct OwrlabRun **out);

/**
 * # Safety
 * `run` must be a live handle.
 */
size_t owrlab_run_row_count(const struct OwrlabRun *run);

/**
 * Path of the results CSV; owned by the handle.
 *
 * # Safety
 * `run` must be a live handle.
 */
const char *owrlab_run_results_path(const struct OwrlabRun *run);

/**
 * Copies row `index` into `out`. Method and plugin indices refer to
 * `cfg`, which must be the configuration the run was started from.
 *
 * # Safety
 * All pointers must be valid.
 */
enum OwrlabStatus owrlab_run_get_row(const struct OwrlabRun *run,
                                     const struct OwrlabConfig *cfg,
                                     size_t index,
                                     struct OwrlabRow *out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void owrlab_run_free(struct OwrlabRun *run);

/**
 * Trains configured method `method_index` with plugin `plugin_index`
 * through the whole schedule of `seed` on the train domain.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum OwrlabStatus owrlab_model_train(const struct OwrlabConfig *cfg,
                                     uint32_t method_index,
                                     uint32_t plugin_index,
                                     uint64_t seed,
                                     struct OwrlabModel **out);

/**
 * Number of `f32` values one image has (height x width x channels, in
 * row-major order with interleaved channels, values in [0, 1]).
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t owrlab_model_input_len(const struct OwrlabModel *model);

/**
 * Classifies `count` images stored back to back in `pixels`. Writes one
 * class id per image to `labels`, or [`OWRLAB_UNKNOWN`] when `reject` is
 * nonzero and the image is rejected.
 *
 * # Safety
 * `pixels` must hold `count * owrlab_model_input_len` values and `labels`
 * room for `count` values.
 */
enum OwrlabStatus owrlab_model_classify(const struct OwrlabModel *model,
                                        const float *pixels,
                                        size_t count,
                                        int32_t reject,
                                        int64_t *labels);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void owrlab_model_free(struct OwrlabModel *model);

/**
 * Runs the built-in gradient and formula checks and writes the number of
 * failures to `failed`.
 *
 * # Safety
 * `failed` must be a valid pointer.
 */
enum OwrlabStatus owrlab_selftest(uint32_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OWRLAB_H */
