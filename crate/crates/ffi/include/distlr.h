#ifndef DISTLR_H
#define DISTLR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DistlrStatus {
  DISTLR_STATUS_OK = 0,
  DISTLR_STATUS_NULL_POINTER = 1,
  DISTLR_STATUS_INVALID_ARGUMENT = 2,
  DISTLR_STATUS_IO = 3,
  DISTLR_STATUS_PARSE = 4,
  DISTLR_STATUS_VERSION = 5,
  DISTLR_STATUS_DIMENSION = 6,
  DISTLR_STATUS_UNDEFINED = 7,
  DISTLR_STATUS_FIT = 8,
  DISTLR_STATUS_PANIC = 9,
  DISTLR_STATUS_OTHER = 10,
} DistlrStatus;

/**
 * A validated trace panel loaded from CSV.
 */
typedef struct DistlrMatrix DistlrMatrix;

/**
 * A fitted model loaded from a JSON model file.
 */
typedef struct DistlrModel DistlrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL after a
 * success. The string stays valid until the next call on this thread.
 */
const char *distlr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *distlr_version(void);

/**
 * Loads a model file. On success `*out` receives a handle to release with
 * [`distlr_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DistlrStatus distlr_model_load(const char *path, struct DistlrModel **out);

/**
 * Releases a model handle; NULL is ignored.
 *
 * # Safety
 * `model` must come from [`distlr_model_load`] and not be used afterwards.
 */
void distlr_model_free(struct DistlrModel *model);

/**
 * Length of the trace rows the model expects.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DistlrStatus distlr_model_n_features(const struct DistlrModel *model, size_t *out);

/**
 * Applies the preprocessing the model was fitted on (log normalization or
 * dichotomization) to one raw trace of `n` areas, writing `n` values.
 *
 * # Safety
 * `raw` and `out` must point to `n` doubles.
 */
enum DistlrStatus distlr_model_prepare(const struct DistlrModel *model,
                                       const double *raw,
                                       size_t n,
                                       double *out);

/**
 * LR for two preprocessed traces of `n` features. `out_log10` may be NULL.
 *
 * # Safety
 * `x` and `y` must point to `n` doubles; `out_lr` must be valid.
 */
enum DistlrStatus distlr_model_lr(const struct DistlrModel *model,
                                  const double *x,
                                  const double *y,
                                  size_t n,
                                  double *out_lr,
                                  double *out_log10);

/**
 * Posterior probability of the same-source hypothesis for prior `prior_ss`.
 *
 * # Safety
 * `x` and `y` must point to `n` doubles; `out` must be valid.
 */
enum DistlrStatus distlr_model_posterior(const struct DistlrModel *model,
                                         const double *x,
                                         const double *y,
                                         size_t n,
                                         double prior_ss,
                                         double *out);

/**
 * Loads a panel CSV. On success `*out` receives a handle to release with
 * [`distlr_matrix_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DistlrStatus distlr_matrix_load_csv(const char *path, struct DistlrMatrix **out);

/**
 * Releases a panel handle; NULL is ignored.
 *
 * # Safety
 * `matrix` must come from [`distlr_matrix_load_csv`] and not be used
 * afterwards.
 */
void distlr_matrix_free(struct DistlrMatrix *matrix);

/**
 * Number of traces and features of a panel; either output may be NULL.
 *
 * # Safety
 * `matrix` must be a live handle.
 */
enum DistlrStatus distlr_matrix_shape(const struct DistlrMatrix *matrix,
                                      size_t *n_traces,
                                      size_t *n_features);

/**
 * Copies row `i` into `out`, which holds `len` doubles (at least the
 * feature count).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum DistlrStatus distlr_matrix_row(const struct DistlrMatrix *matrix,
                                    size_t i,
                                    double *out,
                                    size_t len);

/**
 * LR between rows `i` and `j` of a panel already in the model's mode.
 *
 * # Safety
 * Handles must be live; `out_lr` must be valid; `out_log10` may be NULL.
 */
enum DistlrStatus distlr_model_lr_rows(const struct DistlrModel *model,
                                       const struct DistlrMatrix *matrix,
                                       size_t i,
                                       size_t j,
                                       double *out_lr,
                                       double *out_log10);

/**
 * Mann–Whitney AUC of same-source versus different-source scores.
 *
 * # Safety
 * `ss` and `ds` must point to `n_ss` and `n_ds` doubles.
 */
enum DistlrStatus distlr_roc_auc(const double *ss,
                                 size_t n_ss,
                                 const double *ds,
                                 size_t n_ds,
                                 double *out);

/**
 * One-sided Wilcoxon rank-sum p-value for x tending smaller than y.
 *
 * # Safety
 * `x` and `y` must point to `nx` and `ny` doubles.
 */
enum DistlrStatus distlr_wilcoxon_p(const double *x,
                                    size_t nx,
                                    const double *y,
                                    size_t ny,
                                    double *out);

/**
 * One-sided Fisher exact p-value P(X >= a) for the table [[a, b], [c, d]].
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DistlrStatus distlr_fisher_p(uint64_t a, uint64_t b, uint64_t c, uint64_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTLR_H */
