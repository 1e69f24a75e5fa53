#ifndef GEM_DST_H
#define GEM_DST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GemStatus {
  GEM_STATUS_OK = 0,
  GEM_STATUS_NULL_POINTER = 1,
  GEM_STATUS_INVALID_UTF8 = 2,
  GEM_STATUS_INVALID_ARGUMENT = 3,
  GEM_STATUS_PARSE = 4,
  GEM_STATUS_IO = 5,
  GEM_STATUS_MISSING_DOMAIN = 6,
  GEM_STATUS_BUFFER_TOO_SMALL = 7,
  GEM_STATUS_PANIC = 8,
} GemStatus;

typedef enum GemExpert {
  GEM_EXPERT_GNN = 0,
  GEM_EXPERT_SEQ = 1,
} GemExpert;

typedef struct GemAccuracyTable GemAccuracyTable;

typedef struct GemCorpus GemCorpus;

typedef struct GemHashEmbedder GemHashEmbedder;

typedef struct GemIndex GemIndex;

typedef struct GemRouteDecision {
  enum GemExpert expert;
  uint32_t votes_gnn;
  uint32_t votes_seq;
} GemRouteDecision;

typedef struct GemMetrics {
  uint64_t user_turns;
  double jga;
  double jta;
  double intent_acc;
  double domain_acc;
  double slot_acc;
} GemMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gem_version(void);

/**
 * Message for the most recent failure on this thread, or null after a success.
 *
 * The pointer stays valid until the next gem-dst call on the same thread.
 */
const char *gem_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from a gem-dst function that hands over ownership and must not be used afterwards.
 */
void gem_string_free(char *s);

/**
 * Parses a corpus envelope from JSON.
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum GemStatus gem_corpus_from_json(const char *json, struct GemCorpus **out);

/**
 * Number of dialogues in the corpus; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t gem_corpus_dialogue_count(const struct GemCorpus *corpus);

/**
 * Number of user turns across the corpus; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t gem_corpus_user_turn_count(const struct GemCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void gem_corpus_free(struct GemCorpus *corpus);

/**
 * Parses a router accuracy table from its CSV form.
 *
 * # Safety
 * `csv` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum GemStatus gem_accuracy_table_from_csv(const char *csv, struct GemAccuracyTable **out);

/**
 * Routes one turn given its active domains by majority vote over the table.
 *
 * # Safety
 * `domains` must point to `count` valid NUL-terminated strings (or be null when `count` is 0).
 */
enum GemStatus gem_accuracy_table_route(const struct GemAccuracyTable *table,
                                        const char *const *domains,
                                        size_t count,
                                        struct GemRouteDecision *out);

/**
 * # Safety
 * `table` must be null or a handle not yet freed.
 */
void gem_accuracy_table_free(struct GemAccuracyTable *table);

/**
 * Creates an empty index of the given dimension.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum GemStatus gem_index_new(size_t dimension, struct GemIndex **out);

/**
 * Opens an index file written by `gem build-index`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a writable pointer.
 */
enum GemStatus gem_index_open(const char *path, struct GemIndex **out);

/**
 * Adds one example with an empty text and no gold pairs.
 *
 * # Safety
 * `embedding` must point to `len` doubles.
 */
enum GemStatus gem_index_insert(struct GemIndex *index,
                                const char *id,
                                const double *embedding,
                                size_t len);

/**
 * Number of records; 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t gem_index_len(const struct GemIndex *index);

/**
 * Top-k records with similarity above `tau` as a JSON array of `{"id", "similarity"}`.
 *
 * The string in `out_json` is owned by the caller and released with [`gem_string_free`].
 *
 * # Safety
 * `query` must point to `len` doubles and `out_json` must be writable.
 */
enum GemStatus gem_index_query(const struct GemIndex *index,
                               const double *query,
                               size_t len,
                               size_t k,
                               double tau,
                               char **out_json);

/**
 * # Safety
 * `index` must be null or a handle not yet freed.
 */
void gem_index_free(struct GemIndex *index);

/**
 * # Safety
 * `out` must be a writable pointer.
 */
enum GemStatus gem_hash_embedder_new(size_t dimension, struct GemHashEmbedder **out);

/**
 * Embedding width; 0 for a null handle.
 *
 * # Safety
 * `embedder` must be null or a live handle.
 */
size_t gem_hash_embedder_dimension(const struct GemHashEmbedder *embedder);

/**
 * Writes the embedding of `input` into `out`, which must hold `capacity` doubles.
 *
 * # Safety
 * `out` must point to `capacity` writable doubles.
 */
enum GemStatus gem_hash_embedder_embed(const struct GemHashEmbedder *embedder,
                                       const char *input,
                                       double *out,
                                       size_t capacity);

/**
 * # Safety
 * `embedder` must be null or a handle not yet freed.
 */
void gem_hash_embedder_free(struct GemHashEmbedder *embedder);

/**
 * Scores the turn results in a `turns.jsonl` document.
 *
 * # Safety
 * `jsonl` must be a valid NUL-terminated string and `out` writable.
 */
enum GemStatus gem_metrics_from_jsonl(const char *jsonl, struct GemMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GEM_DST_H */
