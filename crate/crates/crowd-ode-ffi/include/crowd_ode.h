#ifndef CROWD_ODE_H
#define CROWD_ODE_H

/* Generated by cbindgen from crowd-ode-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code for every fallible call.
 */
typedef enum CoStatus {
  CO_STATUS_OK = 0,
  /**
   * The configuration failed to parse or validate.
   */
  CO_STATUS_INVALID_CONFIG = 1,
  /**
   * Simulation, training, or evaluation failed at runtime.
   */
  CO_STATUS_RUNTIME = 2,
  /**
   * A file could not be read or written.
   */
  CO_STATUS_IO = 3,
  /**
   * A null pointer, non-UTF-8 string, or out-of-range argument.
   */
  CO_STATUS_ARGUMENT = 4,
} CoStatus;

/**
 * Owns a trained model checkpoint.
 */
typedef struct CoCheckpoint CoCheckpoint;

/**
 * Owns a validated run configuration.
 */
typedef struct CoConfig CoConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the most recent failing call on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *co_last_error(void);

/**
 * Library version as a static string.
 */
const char *co_version(void);

/**
 * Loads and validates a TOML run configuration from a file.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` must be a valid
 * pointer. On success `*out` owns the handle; release it with
 * [`co_config_free`].
 */
enum CoStatus co_config_from_file(const char *path, struct CoConfig **out);

/**
 * Parses and validates a TOML run configuration from a string.
 *
 * # Safety
 * As [`co_config_from_file`], with `toml` holding the document body.
 */
enum CoStatus co_config_from_toml(const char *toml, struct CoConfig **out);

/**
 * Loads one of the packaged experiment presets by name.
 *
 * # Safety
 * As [`co_config_from_file`].
 */
enum CoStatus co_config_preset(const char *name, struct CoConfig **out);

/**
 * Replaces the master seed.
 *
 * # Safety
 * `cfg` must be a live handle from a `co_config_*` constructor.
 */
enum CoStatus co_config_set_seed(struct CoConfig *cfg, uint64_t seed);

/**
 * Writes the config digest (64 hex chars) into `buf` as a NUL-terminated
 * string. `cap` is the buffer capacity in bytes; 65 is enough.
 *
 * # Safety
 * `cfg` must be a live handle; `buf` must point to `cap` writable bytes.
 */
enum CoStatus co_config_digest(const struct CoConfig *cfg, char *buf, size_t cap);

/**
 * # Safety
 * `cfg` must be null or a handle not freed before.
 */
void co_config_free(struct CoConfig *cfg);

/**
 * Simulates the configured teacher model and writes the trajectory
 * dataset plus `manifest.json` into `dir`.
 *
 * # Safety
 * `cfg` must be a live handle; `dir` a valid NUL-terminated string.
 */
enum CoStatus co_generate_data(const struct CoConfig *cfg, const char *dir);

/**
 * Trains the force field on a dataset manifest and writes the checkpoint
 * to `checkpoint_path`.
 *
 * # Safety
 * `cfg` must be a live handle; both paths valid NUL-terminated strings.
 */
enum CoStatus co_train(const struct CoConfig *cfg,
                       const char *manifest_path,
                       const char *checkpoint_path);

/**
 * Opens a trained checkpoint.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string; `out` a valid pointer. On
 * success `*out` owns the handle; release it with [`co_checkpoint_free`].
 */
enum CoStatus co_checkpoint_open(const char *path, struct CoCheckpoint **out);

/**
 * # Safety
 * `ck` must be null or a handle not freed before.
 */
void co_checkpoint_free(struct CoCheckpoint *ck);

/**
 * Rolls out the learned model for a fresh crowd of `n_agents` spawned
 * with `seed` (using the config's eval section for everything else) and
 * writes the trajectory CSV plus its metadata sidecar to `csv_path`.
 * When `evacuation_time_s` is non-null it receives the time the last
 * agent left, or NaN if anyone was still inside at the horizon.
 *
 * # Safety
 * `cfg` and `ck` must be live handles; `csv_path` a valid NUL-terminated
 * string; `evacuation_time_s` null or a valid pointer.
 */
enum CoStatus co_simulate_to_file(const struct CoConfig *cfg,
                                  const struct CoCheckpoint *ck,
                                  size_t n_agents,
                                  uint64_t seed,
                                  const char *csv_path,
                                  double *evacuation_time_s);

/**
 * Paired Monte Carlo evaluation of a checkpoint against the teacher it
 * was configured with; writes `report.json` and the exit-rate and
 * evacuation-time CSVs into `out_dir`.
 *
 * # Safety
 * `cfg` and `ck` must be live handles; `out_dir` a valid NUL-terminated
 * string.
 */
enum CoStatus co_evaluate(const struct CoConfig *cfg,
                          const struct CoCheckpoint *ck,
                          const char *out_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* CROWD_ODE_H */
