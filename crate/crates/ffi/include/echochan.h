#ifndef ECHOCHAN_H
#define ECHOCHAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call. Values 2, 3 and 4 match the CLI exit codes.
 */
typedef enum EchochanStatus {
  ECHOCHAN_STATUS_OK = 0,
  /**
   * A required pointer argument was null, or a string was not UTF-8.
   */
  ECHOCHAN_STATUS_INVALID_ARGUMENT = 1,
  ECHOCHAN_STATUS_CONFIG = 2,
  ECHOCHAN_STATUS_DATA = 3,
  ECHOCHAN_STATUS_NUMERIC = 4,
  /**
   * The output buffer is too small; the required length is reported.
   */
  ECHOCHAN_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  ECHOCHAN_STATUS_INTERNAL = 6,
} EchochanStatus;

/**
 * Opaque dataset.
 */
typedef struct EchochanDataset EchochanDataset;

/**
 * Opaque trained model.
 */
typedef struct EchochanModel EchochanModel;

/**
 * Aggregate metrics, mirroring the Rust `MetricReport`.
 */
typedef struct EchochanReport {
  double mape_percent;
  double mse;
  uint64_t samples_used;
  uint64_t samples_excluded;
  double wall_time_seconds;
} EchochanReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *echochan_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next echochan call on the same thread.
 */
const char *echochan_last_error(void);

/**
 * Loads an `ESN1` model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EchochanStatus echochan_model_load(const char *path, struct EchochanModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `echochan_model_load` and not be used afterwards.
 */
void echochan_model_free(struct EchochanModel *model);

/**
 * Input dimension K, reservoir size N, output dimension L and washout.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EchochanStatus echochan_model_dims(const struct EchochanModel *model,
                                        size_t *k,
                                        size_t *n,
                                        size_t *l,
                                        size_t *washout);

/**
 * Runs the model over one input sequence.
 *
 * `inputs` is K × `t_len`, row-major. `out` receives L × (`t_len` − washout),
 * row-major; `out_len` is its capacity in doubles. If it is too small,
 * `BufferTooSmall` is returned and `*required` (when non-null) holds the
 * needed length.
 *
 * # Safety
 * `inputs` must hold K·`t_len` doubles and `out` `out_len` doubles.
 */
enum EchochanStatus echochan_model_predict(const struct EchochanModel *model,
                                           const double *inputs,
                                           size_t t_len,
                                           double *out,
                                           size_t out_len,
                                           size_t *required);

/**
 * Loads an `ESD1` dataset file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EchochanStatus echochan_dataset_load(const char *path, struct EchochanDataset **out);

/**
 * Releases a dataset. NULL is ignored.
 *
 * # Safety
 * `dataset` must come from `echochan_dataset_load` and not be used afterwards.
 */
void echochan_dataset_free(struct EchochanDataset *dataset);

/**
 * Number of sequences, sequence length T, and dimensions K and L.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EchochanStatus echochan_dataset_info(const struct EchochanDataset *dataset,
                                          size_t *count,
                                          size_t *t_len,
                                          size_t *k,
                                          size_t *l);

/**
 * Scores a model on every sequence of a dataset.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EchochanStatus echochan_evaluate(const struct EchochanModel *model,
                                      const struct EchochanDataset *dataset,
                                      struct EchochanReport *out);

/**
 * Spectral radius of an `n × n` row-major matrix.
 *
 * # Safety
 * `m` must hold n·n doubles (it may be NULL when n = 0) and `out` be valid.
 */
enum EchochanStatus echochan_spectral_radius(const double *m, size_t n, double *out);

/**
 * MAPE and MSE of two equal-length arrays. Samples with |actual| < `epsilon`
 * are excluded from the MAPE and counted.
 *
 * # Safety
 * `actual` and `predicted` must hold `len` doubles and `out` be valid.
 */
enum EchochanStatus echochan_mape(const double *actual,
                                  const double *predicted,
                                  size_t len,
                                  double epsilon,
                                  struct EchochanReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOCHAN_H */
