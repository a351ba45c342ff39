#ifndef AIRCAST_H
#define AIRCAST_H

/* Generated by cbindgen from the aircast-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_ARGUMENT = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_IO = 3,
  AC_STATUS_PARSE = 4,
  AC_STATUS_CONFIG = 5,
  AC_STATUS_SHAPE = 6,
  AC_STATUS_RUNTIME = 7,
  AC_STATUS_PANICKED = 8,
} AcStatus;

/**
 * Opaque forecasting handle: a loaded checkpoint bound to a data
 * directory.
 */
typedef struct AcPredictor AcPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (truncated to
 * `cap` bytes including the trailing NUL) and returns the full message
 * length in bytes, excluding the NUL. Call with `cap == 0` to size a
 * buffer first.
 *
 * # Safety
 * `buf` must be NULL or point to at least `cap` writable bytes.
 */
size_t ac_last_error(char *buf, size_t cap);

/**
 * Library version as a static string.
 */
const char *ac_version(void);

/**
 * Generates a synthetic dataset (stations.csv, readings.csv,
 * true_graph.csv) in `out_dir`. `graph_kind` is "ring", "clusters" or
 * "random".
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings.
 */
enum AcStatus ac_synth(uint32_t nodes,
                       uint64_t steps,
                       const char *graph_kind,
                       uint64_t seed,
                       const char *out_dir);

/**
 * Trains on `data_dir` with the configuration file at `config_path`,
 * writing model.ckpt, train_log.csv and evaluation.csv into `out_dir`.
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings.
 */
enum AcStatus ac_train(const char *config_path, const char *data_dir, const char *out_dir);

/**
 * Evaluates a checkpoint on the test split of `data_dir` and writes the
 * per-horizon MAE/RMSE table to `out_csv`.
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings.
 */
enum AcStatus ac_evaluate(const char *checkpoint_path, const char *data_dir, const char *out_csv);

/**
 * Computes per-station local Moran values for every timestamp and
 * writes them to `out_csv` (wraps the CLI's `moran` subcommand).
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings.
 */
enum AcStatus ac_moran(const char *data_dir, uint32_t k, const char *out_csv);

/**
 * Opens a predictor from a checkpoint and the data directory providing
 * the observation history. The handle is not thread-safe; confine it to
 * one thread.
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings and
 * `out` must be NULL or a valid pointer slot.
 */
enum AcStatus ac_predictor_open(const char *checkpoint_path,
                                const char *data_dir,
                                struct AcPredictor **out);

/**
 * Releases a predictor handle. NULL is a no-op.
 *
 * # Safety
 * `p` must be NULL or a handle from `ac_predictor_open` not yet closed.
 */
void ac_predictor_close(struct AcPredictor *p);

/**
 * Station count and forecast horizon of an open predictor.
 *
 * # Safety
 * `p` must be an open handle; the out-pointers must be NULL or writable.
 */
enum AcStatus ac_predictor_dims(const struct AcPredictor *p,
                                uint32_t *n_stations,
                                uint32_t *horizon);

/**
 * Forecasts the horizon following the window that ends at
 * `at_timestamp` (ISO-8601 UTC, on the data grid). `out` receives
 * n_stations×horizon doubles, row-major by station, in denormalized
 * units; `out_len` must equal that product.
 *
 * # Safety
 * `p` must be an open handle, `at_timestamp` a valid NUL-terminated
 * string, and `out` must point to at least `out_len` writable doubles.
 */
enum AcStatus ac_predictor_forecast(const struct AcPredictor *p,
                                    const char *at_timestamp,
                                    double *out,
                                    size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AIRCAST_H */
