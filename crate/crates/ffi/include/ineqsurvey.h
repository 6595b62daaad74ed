#ifndef INEQSURVEY_H
#define INEQSURVEY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum IsStatus {
  IS_STATUS_OK = 0,
  IS_STATUS_NULL_POINTER = 1,
  IS_STATUS_INVALID_INPUT = 2,
  IS_STATUS_INFEASIBLE = 3,
  IS_STATUS_RUNTIME = 4,
  IS_STATUS_HASH_MISMATCH = 5,
  IS_STATUS_PANIC = 6,
} IsStatus;

/**
 * Variance estimator used at each sweep.
 */
typedef enum IsVarianceMode {
  IS_VARIANCE_MODE_LINEARIZATION = 0,
  IS_VARIANCE_MODE_JACKKNIFE = 1,
  IS_VARIANCE_MODE_FAST_APPROX = 2,
} IsVarianceMode;

/**
 * A parsed and feasibility-checked dataset.
 */
typedef struct IsDataset IsDataset;

/**
 * The result of an estimation run.
 */
typedef struct IsReport IsReport;

/**
 * Settings of [`is_estimate`]. Obtain defaults from [`is_default_options`].
 */
typedef struct IsEstimateOptions {
  size_t iterations;
  size_t burn_in;
  uint64_t seed;
  size_t chains;
  double alpha;
  enum IsVarianceMode variance_mode;
  /**
   * 0 keeps the dataset's components; 4 aggregates a 5-component dataset.
   */
  uint32_t components;
} IsEstimateOptions;

/**
 * One row of a report.
 */
typedef struct IsReportRow {
  double lower;
  double prediction;
  double upper;
  double sd;
  size_t n_used;
} IsReportRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *is_version(void);

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread.
 */
const char *is_last_error_message(void);

/**
 * Weighted Gini index. `weights` may be null for equal weights.
 *
 * # Safety
 * `values` (and `weights` when non-null) must point to `n` doubles;
 * `out` must be writable.
 */
enum IsStatus is_gini_weighted(const double *values, const double *weights, size_t n, double *out);

/**
 * Weighted Theil index.
 *
 * # Safety
 * As for [`is_gini_weighted`].
 */
enum IsStatus is_theil(const double *values, const double *weights, size_t n, double *out);

/**
 * Weighted Atkinson index with inequality aversion `eps > 0`.
 *
 * # Safety
 * As for [`is_gini_weighted`].
 */
enum IsStatus is_atkinson(const double *values,
                          const double *weights,
                          size_t n,
                          double eps,
                          double *out);

/**
 * Left-continuous weighted quantile at level `p` in (0, 1).
 *
 * # Safety
 * As for [`is_gini_weighted`].
 */
enum IsStatus is_weighted_quantile(const double *values,
                                   const double *weights,
                                   size_t n,
                                   double p,
                                   double *out);

/**
 * Parses a dataset file and checks every household's domain. `cap`
 * replaces open bracket uppers; pass 0 for the default.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum IsStatus is_dataset_load(const char *path, double cap, struct IsDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from [`is_dataset_load`] and not be used afterwards.
 */
void is_dataset_free(struct IsDataset *ds);

/**
 * Number of households in a dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle and `out` writable.
 */
enum IsStatus is_dataset_len(const struct IsDataset *ds, size_t *out);

/**
 * Fills `out` with the default estimation settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum IsStatus is_default_options(struct IsEstimateOptions *out);

/**
 * Runs the sampler. `summaries` is a comma-separated list such as
 * `"gini,theil,atkinson:1.5"`, or null for the standard set.
 *
 * # Safety
 * `ds` must be a live dataset handle, `options` readable, `summaries`
 * null or NUL-terminated, and `out` writable.
 */
enum IsStatus is_estimate(const struct IsDataset *ds,
                          const struct IsEstimateOptions *options,
                          const char *summaries,
                          struct IsReport **out);

/**
 * Releases a report. Null is ignored.
 *
 * # Safety
 * `report` must come from [`is_estimate`] and not be used afterwards.
 */
void is_report_free(struct IsReport *report);

/**
 * Number of rows (summaries) in a report.
 *
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum IsStatus is_report_len(const struct IsReport *report, size_t *out);

/**
 * Bounds, prediction and spread of row `i`.
 *
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum IsStatus is_report_row(const struct IsReport *report, size_t i, struct IsReportRow *out);

/**
 * Label of row `i` (owned by the report), or null when out of range.
 *
 * # Safety
 * `report` must be a live report handle.
 */
const char *is_report_label(const struct IsReport *report, size_t i);

/**
 * Writes the report, sweep log, running means and manifest into `dir`.
 *
 * # Safety
 * `report` must be a live report handle and `dir` NUL-terminated.
 */
enum IsStatus is_report_write(const struct IsReport *report, const char *dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INEQSURVEY_H */
