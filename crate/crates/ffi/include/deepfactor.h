#ifndef DEEPFACTOR_H
#define DEEPFACTOR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_INVALID_ARGUMENT = 1,
  DF_STATUS_DATA = 2,
  DF_STATUS_NUMERICAL = 3,
  DF_STATUS_NULL_POINTER = 4,
  DF_STATUS_PANIC = 5,
} DfStatus;

/**
 * Which benchmark factors sit beside the deep factors.
 */
typedef enum DfBenchmark {
  DF_BENCHMARK_CAPM = 0,
  DF_BENCHMARK_FF3 = 1,
  DF_BENCHMARK_FF4 = 2,
} DfBenchmark;

/**
 * A loaded or simulated panel of firms, macro series, factors and
 * portfolios.
 */
typedef struct DfDataset DfDataset;

/**
 * A trained deep factor model.
 */
typedef struct DfModel DfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *df_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *df_version(void);

/**
 * Simulates a market with one planted factor.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum DfStatus df_dataset_simulate(size_t firms,
                                  size_t months,
                                  uint64_t seed,
                                  struct DfDataset **out);

/**
 * Loads `firms.csv`, `macro.csv`, `factors.csv` and `portfolios.csv` from
 * `dir`.
 *
 * # Safety
 * `dir` must be a nul-terminated string and `out` writable.
 */
enum DfStatus df_dataset_load(const char *dir, struct DfDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void df_dataset_free(struct DfDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle and `months`/`portfolios` writable.
 */
enum DfStatus df_dataset_shape(const struct DfDataset *dataset, size_t *months, size_t *portfolios);

/**
 * Trains one architecture on every month of `dataset`. Mini-batches are
 * capped at the sample length.
 *
 * # Safety
 * `dataset` must be a live handle and `out` writable.
 */
enum DfStatus df_model_train(const struct DfDataset *dataset,
                             size_t layers,
                             size_t factors,
                             size_t conditions,
                             enum DfBenchmark benchmark,
                             size_t epochs,
                             uint64_t seed,
                             struct DfModel **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum DfStatus df_model_load(const char *path, struct DfModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a nul-terminated string.
 */
enum DfStatus df_model_save(const struct DfModel *model, const char *path);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void df_model_free(struct DfModel *model);

/**
 * Number of deep factors and the full-window training loss.
 *
 * # Safety
 * `model` must be a live handle; outputs must be writable.
 */
enum DfStatus df_model_summary(const struct DfModel *model, size_t *factors, double *final_loss);

/**
 * Hard-sort deep factor returns over every month of `dataset`, written as
 * a factors x months row-major matrix into `buffer` of `len` doubles.
 *
 * # Safety
 * Handles must be live and `buffer` must hold `len` doubles.
 */
enum DfStatus df_model_factor_returns(const struct DfModel *model,
                                      const struct DfDataset *dataset,
                                      double *buffer,
                                      size_t len);

/**
 * Root mean squared pricing-error alpha of the model on every month of
 * `dataset`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum DfStatus df_model_alpha_rmse(const struct DfModel *model,
                                  const struct DfDataset *dataset,
                                  double *out);

/**
 * Largest relative error between analytic and finite-difference
 * gradients of one architecture on `dataset`.
 *
 * # Safety
 * `dataset` must be a live handle and `out` writable.
 */
enum DfStatus df_gradcheck(const struct DfDataset *dataset,
                           size_t layers,
                           size_t factors,
                           size_t conditions,
                           uint64_t seed,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEPFACTOR_H */
