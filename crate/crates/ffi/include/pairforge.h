#ifndef PAIRFORGE_H
#define PAIRFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of a fallible call.
 */
typedef enum {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_ARGUMENT = 2,
  PF_STATUS_DIMENSION_MISMATCH = 3,
  PF_STATUS_INVALID_DATA = 4,
  PF_STATUS_IO = 5,
  PF_STATUS_NETWORK = 6,
  PF_STATUS_DIVERGENCE = 7,
  PF_STATUS_PANIC = 8,
} PfStatus;

/**
 * Embedding corpus loaded from a JSON-lines file.
 */
typedef struct PfCorpus PfCorpus;

/**
 * Exact nearest-neighbor index over a fixed point set.
 */
typedef struct PfIndex PfIndex;

/**
 * Positive and negative ordinals mined for one anchor.
 */
typedef struct PfMined PfMined;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *pf_last_error_message(void);

/**
 * Loads an embedding corpus. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
PfStatus pf_corpus_load(const char *path, PfCorpus **out);

/**
 * Number of records; 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t pf_corpus_len(const PfCorpus *corpus);

/**
 * Vector dimension; 0 for NULL or an empty corpus.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t pf_corpus_dim(const PfCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void pf_corpus_free(PfCorpus *corpus);

/**
 * Builds an index over `n` row-major points of dimension `dim`.
 *
 * # Safety
 * `points` must hold `n * dim` doubles and `out` be a valid pointer.
 */
PfStatus pf_index_build(const double *points, size_t n, size_t dim, PfIndex **out);

/**
 * Builds an index over the vectors of a corpus, in record order.
 *
 * # Safety
 * `corpus` must be a live handle and `out` a valid pointer.
 */
PfStatus pf_index_from_corpus(const PfCorpus *corpus, PfIndex **out);

/**
 * Number of indexed points; 0 for NULL.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t pf_index_len(const PfIndex *index);

/**
 * Writes the `k` nearest points to `query`, closest first, ties broken by
 * ordinal.
 *
 * # Safety
 * `query` must hold `dim` doubles; `out_ordinals` and `out_distances` must
 * each have room for `k` elements.
 */
PfStatus pf_index_query_knn(const PfIndex *index,
                            const double *query,
                            size_t dim,
                            size_t k,
                            size_t *out_ordinals,
                            double *out_distances);

/**
 * # Safety
 * `index` must be NULL or a handle not yet freed.
 */
void pf_index_free(PfIndex *index);

/**
 * Mines one anchor with fixed distance thresholds. Positives satisfy
 * `distance <= lower_bound`, negatives `distance > upper_bound`; each list
 * holds at most `max_size` ordinals and the anchor never pairs with itself.
 *
 * # Safety
 * `index` must be a live handle and `out` a valid pointer.
 */
PfStatus pf_mine_anchor(const PfIndex *index,
                        size_t anchor,
                        double lower_bound,
                        double upper_bound,
                        size_t max_size,
                        uint64_t seed,
                        PfMined **out);

/**
 * Positive ordinals of a mining result; `*len` receives the count.
 *
 * # Safety
 * `mined` must be a live handle and `len` a valid pointer. The returned
 * array lives as long as `mined`.
 */
const size_t *pf_mined_positives(const PfMined *mined, size_t *len);

/**
 * Negative ordinals of a mining result; `*len` receives the count.
 *
 * # Safety
 * Same as [`pf_mined_positives`].
 */
const size_t *pf_mined_negatives(const PfMined *mined, size_t *len);

/**
 * # Safety
 * `mined` must be NULL or a handle not yet freed.
 */
void pf_mined_free(PfMined *mined);

/**
 * Linearly interpolated percentile `p` in [0, 100] of `n` samples.
 *
 * # Safety
 * `samples` must hold `n` doubles and `out` be a valid pointer.
 */
PfStatus pf_percentile(const double *samples, size_t n, double p, double *out);

/**
 * Adjusted Fisher–Pearson skewness of `n >= 3` samples.
 *
 * # Safety
 * `samples` must hold `n` doubles and `out` be a valid pointer.
 */
PfStatus pf_skewness(const double *samples, size_t n, double *out);

/**
 * Contrastive loss of a score `d`. Nonzero `label` marks a positive pair.
 */
double pf_contrastive_loss(int label, double d, double alpha);

/**
 * Derivative of [`pf_contrastive_loss`] with respect to `d`.
 */
double pf_loss_gradient(int label, double d, double alpha);

/**
 * Fraction of the answer's distinct tokens found in the context.
 *
 * # Safety
 * `answer` and `context` must be NUL-terminated UTF-8 strings and `out` a
 * valid pointer.
 */
PfStatus pf_keyword_overlap(const char *answer, const char *context, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAIRFORGE_H */
