#ifndef TRIPOD_H
#define TRIPOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum TripodStatus {
  /**
   * Success.
   */
  TRIPOD_STATUS_OK = 0,
  /**
   * Internal error (I/O, panic, unexpected state).
   */
  TRIPOD_STATUS_INTERNAL = 1,
  /**
   * Invalid configuration or argument.
   */
  TRIPOD_STATUS_CONFIG = 2,
  /**
   * Numerical failure (non-finite values).
   */
  TRIPOD_STATUS_NUMERICAL = 3,
  /**
   * No checkpoint passed the PSNR filter.
   */
  TRIPOD_STATUS_NO_CHECKPOINT = 4,
  /**
   * A required pointer argument was NULL.
   */
  TRIPOD_STATUS_NULL_POINTER = 5,
} TripodStatus;

/**
 * Opaque run-configuration handle.
 */
typedef struct TripodConfig TripodConfig;

/**
 * Metric bundle for one evaluated checkpoint.
 */
typedef struct TripodMetrics {
  double info_m;
  double info_c;
  double info_e;
  double dci_d;
  double dci_c;
  double dci_i;
  double psnr;
  uint64_t step;
} TripodMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build identifier of the linked library. The returned pointer is
 * static; do not free it.
 */
const char *tripod_version(void);

/**
 * Message for the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread; do not free.
 */
const char *tripod_last_error(void);

/**
 * Creates a config with all defaults. On success writes a handle the
 * caller must release with `tripod_config_free`.
 */
enum TripodStatus tripod_config_default(struct TripodConfig **out);

/**
 * Parses a flat-JSON config (same schema as the CLI's `--config`
 * file). Unknown keys are rejected.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string; `out` must be a valid
 * pointer to pointer.
 */
enum TripodStatus tripod_config_from_json(const char *json, struct TripodConfig **out);

/**
 * Serializes a config back to JSON. The returned string must be
 * released with `tripod_string_free`.
 *
 * # Safety
 * `config` must be a live handle from this API.
 */
enum TripodStatus tripod_config_to_json(const struct TripodConfig *config, char **out);

/**
 * Overrides the config's seed.
 *
 * # Safety
 * `config` must be a live handle from this API.
 */
enum TripodStatus tripod_config_set_seed(struct TripodConfig *config, uint64_t seed);

/**
 * Releases a config handle. NULL is a no-op.
 *
 * # Safety
 * `config` must be NULL or a handle from this API, not yet freed.
 */
void tripod_config_free(struct TripodConfig *config);

/**
 * Releases a string returned by this API. NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a string returned by this API, not yet freed.
 */
void tripod_string_free(char *s);

/**
 * Trains under `config`, selects the best checkpoint by the PSNR
 * filter, and writes its metrics to `out_metrics`. When `out_dir` is
 * non-NULL, checkpoints are also written there.
 *
 * # Safety
 * `config` must be a live handle; `out_dir` NULL or a valid string;
 * `out_metrics` a valid pointer.
 */
enum TripodStatus tripod_train(const struct TripodConfig *config,
                               const char *out_dir,
                               struct TripodMetrics *out_metrics);

/**
 * Evaluates a checkpoint file on its embedded dataset.
 *
 * # Safety
 * `path` must be a valid NUL-terminated path string; `out_metrics` a
 * valid pointer.
 */
enum TripodStatus tripod_eval_checkpoint(const char *path, struct TripodMetrics *out_metrics);

/**
 * Runs a verification suite ("all", "gradcheck", "kde", "hutchinson",
 * "prop31", "prop32"). Returns Ok only when every check passes.
 *
 * # Safety
 * `suite` must be a valid NUL-terminated string.
 */
enum TripodStatus tripod_oracle(const char *suite);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIPOD_H */
