#ifndef SCORESYNC_H
#define SCORESYNC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_ARGUMENT = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_NUMERIC = 4,
  SS_STATUS_DIMENSION = 5,
  SS_STATUS_FORMAT = 6,
  SS_STATUS_PANIC = 7,
} SsStatus;

/**
 * Opaque loaded corpus.
 */
typedef struct SsCorpus SsCorpus;

/**
 * Opaque trained model.
 */
typedef struct SsModel SsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread (empty after success).
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *ss_last_error_message(void);

/**
 * Load a checkpoint directory written by the `train` command.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_model_load(const char *dir, struct SsModel **out);

/**
 * # Safety
 * `model` must come from [`ss_model_load`] and not be used afterwards.
 */
void ss_model_free(struct SsModel *model);

/**
 * Side of the model's square input grid.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_model_grid_len(const struct SsModel *model, size_t *out);

/**
 * Align a `p x q` similarity matrix; writes `p` score positions to `out_path`.
 *
 * # Safety
 * `similarity` must hold `p * q` values and `out_path` room for `p`.
 */
enum SsStatus ss_align(const struct SsModel *model,
                       const double *similarity,
                       size_t p,
                       size_t q,
                       double *out_path);

/**
 * Classic DTW over a `p x q` cost matrix: the per-frame path (length `p`)
 * and the accumulated cost.
 *
 * # Safety
 * `costs` must hold `p * q` values, `out_path` room for `p`; `out_cost` may be null.
 */
enum SsStatus ss_dtw_classic(const double *costs,
                             size_t p,
                             size_t q,
                             double *out_path,
                             double *out_cost);

/**
 * Soft-DTW divergence with absolute-difference cost. `grad_a` (length
 * `na`) receives the gradient with respect to `a` when non-null.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` values; `out_value` must be writable.
 */
enum SsStatus ss_softdtw_divergence(const double *a,
                                    size_t na,
                                    const double *b,
                                    size_t nb,
                                    double lambda,
                                    double *out_value,
                                    double *grad_a);

/**
 * Percentage of frames within each margin (seconds); `out_percent` has
 * `n_margins` slots.
 *
 * # Safety
 * `pred` and `gt` must hold `n` values, `margins` and `out_percent` `n_margins`.
 */
enum SsStatus ss_alignment_accuracy(const double *pred,
                                    const double *gt,
                                    size_t n,
                                    double frame_seconds,
                                    const double *margins,
                                    size_t n_margins,
                                    double *out_percent);

/**
 * Open a corpus directory written by the `gen` command.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SsStatus ss_corpus_open(const char *dir, struct SsCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
enum SsStatus ss_corpus_len(const struct SsCorpus *corpus, size_t *out);

/**
 * Dimensions `(p, q)` of pair `index`.
 *
 * # Safety
 * `corpus` must be a live handle; `p` and `q` must be writable.
 */
enum SsStatus ss_corpus_pair_shape(const struct SsCorpus *corpus,
                                   size_t index,
                                   size_t *p,
                                   size_t *q);

/**
 * Copy the similarity matrix (`p * q` values) and ground-truth path (`p`
 * values) of pair `index`. Either output may be null.
 *
 * # Safety
 * Non-null outputs must have the room stated above.
 */
enum SsStatus ss_corpus_pair_data(const struct SsCorpus *corpus,
                                  size_t index,
                                  double *similarity,
                                  double *gt_path);

/**
 * # Safety
 * `corpus` must come from [`ss_corpus_open`] and not be used afterwards.
 */
void ss_corpus_free(struct SsCorpus *corpus);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCORESYNC_H */
