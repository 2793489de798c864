/* C interface to the kge knowledge graph embedding engine. */

#ifndef KGE_H
#define KGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KgeStatus {
  KGE_STATUS_OK = 0,
  KGE_STATUS_NULL_POINTER = 1,
  KGE_STATUS_INVALID_ARGUMENT = 2,
  KGE_STATUS_IO = 3,
  KGE_STATUS_FORMAT = 4,
  KGE_STATUS_DIMENSION_MISMATCH = 5,
  KGE_STATUS_OUT_OF_RANGE = 6,
  KGE_STATUS_MISSING_TOKENS = 7,
  KGE_STATUS_PANIC = 99,
} KgeStatus;

/**
 * Values accepted by `split` arguments.
 */
typedef enum KgeSplit {
  KGE_SPLIT_TRAIN = 0,
  KGE_SPLIT_VALID = 1,
  KGE_SPLIT_TEST = 2,
} KgeSplit;

/**
 * Values accepted by `direction` arguments: which side of the triple is ranked.
 */
typedef enum KgeDirection {
  KGE_DIRECTION_HEAD = 0,
  KGE_DIRECTION_TAIL = 1,
} KgeDirection;

/**
 * Values accepted by `tie_policy` arguments.
 */
typedef enum KgeTiePolicy {
  KGE_TIE_POLICY_OPTIMISTIC = 0,
  KGE_TIE_POLICY_PESSIMISTIC = 1,
  KGE_TIE_POLICY_MEAN = 2,
} KgeTiePolicy;

/**
 * Opaque trained model with its entity table materialised.
 */
typedef struct KgeModel KgeModel;

/**
 * Opaque triple store.
 */
typedef struct KgeStore KgeStore;

/**
 * Filtered link-prediction metrics.
 */
typedef struct KgeMetrics {
  double mrr;
  double hits_at_1;
  double hits_at_3;
  double hits_at_10;
  /**
   * Number of ranked queries.
   */
  size_t count;
} KgeMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *kge_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *kge_version(void);

/**
 * Opens a store directory written by `kge ingest`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum KgeStatus kge_store_open(const char *dir, struct KgeStore **out);

/**
 * Parses tab-separated triple files. `valid` and `test` may be null.
 * With `numeric` set, fields are decimal ids; otherwise they are labels.
 *
 * # Safety
 * Paths must be null or NUL-terminated strings and `out` a writable pointer.
 */
enum KgeStatus kge_store_load_triples(const char *train,
                                      const char *valid,
                                      const char *test,
                                      bool numeric,
                                      struct KgeStore **out);

/**
 * # Safety
 * `store` must be null or a live handle.
 */
size_t kge_store_num_entities(const struct KgeStore *store);

/**
 * # Safety
 * `store` must be null or a live handle.
 */
size_t kge_store_num_relations(const struct KgeStore *store);

/**
 * Number of triples in `split`; 0 for a null store or unknown split.
 *
 * # Safety
 * `store` must be null or a live handle.
 */
size_t kge_store_split_len(const struct KgeStore *store, int32_t split);

/**
 * Looks up an entity label.
 *
 * # Safety
 * `store` must be a live handle, `label` a NUL-terminated string, `out` writable.
 */
enum KgeStatus kge_store_entity_id(const struct KgeStore *store, const char *label, uint32_t *out);

/**
 * Looks up a relation label.
 *
 * # Safety
 * `store` must be a live handle, `label` a NUL-terminated string, `out` writable.
 */
enum KgeStatus kge_store_relation_id(const struct KgeStore *store,
                                     const char *label,
                                     uint32_t *out);

/**
 * # Safety
 * `store` must be null or a handle from this library that is not used afterwards.
 */
void kge_store_free(struct KgeStore *store);

/**
 * Loads an f32 checkpoint. Token-based models need the token cache written by
 * `kge tokenize`; pass null for direct-lookup models. Entity vectors are
 * encoded once here using `threads` workers.
 *
 * # Safety
 * Paths must be null or NUL-terminated strings and `out` a writable pointer.
 */
enum KgeStatus kge_model_open(const char *checkpoint,
                              const char *tokens,
                              size_t threads,
                              struct KgeModel **out);

/**
 * Embedding dimension `d`.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t kge_model_dim(const struct KgeModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t kge_model_num_entities(const struct KgeModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t kge_model_num_relations(const struct KgeModel *model);

/**
 * Writes the lower-is-better score `d_r(h, t)` of one triple.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum KgeStatus kge_model_score(const struct KgeModel *model,
                               uint32_t head,
                               uint32_t relation,
                               uint32_t tail,
                               float *out);

/**
 * Scores `n` triples laid out as `[h0, r0, t0, h1, r1, t1, ...]` into `out[0..n]`.
 *
 * # Safety
 * `triples` must hold `3 * n` values and `out` room for `n`.
 */
enum KgeStatus kge_model_score_batch(const struct KgeModel *model,
                                     const uint32_t *triples,
                                     size_t n,
                                     float *out);

/**
 * Filtered rank of the gold entity when `direction` of the triple is replaced
 * by every other entity. Known triples of all splits in `store` are filtered.
 *
 * # Safety
 * `model` and `store` must be live handles and `out` writable.
 */
enum KgeStatus kge_model_rank(const struct KgeModel *model,
                              const struct KgeStore *store,
                              uint32_t head,
                              uint32_t relation,
                              uint32_t tail,
                              int32_t direction,
                              int32_t tie_policy,
                              double *out);

/**
 * Filtered MRR and Hits@{1,3,10} over head and tail queries of `split`.
 *
 * # Safety
 * `model` and `store` must be live handles and `out` writable.
 */
enum KgeStatus kge_model_evaluate(const struct KgeModel *model,
                                  const struct KgeStore *store,
                                  int32_t split,
                                  int32_t tie_policy,
                                  size_t threads,
                                  struct KgeMetrics *out);

/**
 * # Safety
 * `model` must be null or a handle from this library that is not used afterwards.
 */
void kge_model_free(struct KgeModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGE_H */
