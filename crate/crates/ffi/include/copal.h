/* Copyright 2026 The copal Authors */
/* SPDX-License-Identifier: Apache-2.0 */

#ifndef COPAL_H
#define COPAL_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CopalStatus {
  COPAL_STATUS_OK = 0,
  COPAL_STATUS_NULL_POINTER = 1,
  COPAL_STATUS_INVALID_ARGUMENT = 2,
  COPAL_STATUS_SHAPE = 3,
  COPAL_STATUS_NUMERICAL = 4,
  COPAL_STATUS_FORMAT = 5,
  COPAL_STATUS_IO = 6,
  COPAL_STATUS_STATE = 7,
  COPAL_STATUS_PANIC = 99,
} CopalStatus;

/**
 * A tokenised corpus with its calibration / evaluation split.
 */
typedef struct CopalCorpus CopalCorpus;

/**
 * A loaded network.
 */
typedef struct CopalNetwork CopalNetwork;

/**
 * A continual pruning session over a fixed base network.
 */
typedef struct CopalPruner CopalPruner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next copal call on the same thread.
 */
const char *copal_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *copal_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CopalStatus copal_network_load(const char *path, struct CopalNetwork **out);

/**
 * # Safety
 * `net` must come from this library; `path` must be NUL-terminated.
 */
enum CopalStatus copal_network_save(const struct CopalNetwork *net, const char *path);

/**
 * # Safety
 * `net` must come from this library or be null.
 */
void copal_network_free(struct CopalNetwork *net);

/**
 * Fraction of zero weights over all prunable layers.
 *
 * # Safety
 * `net` must come from this library and `out` must be valid.
 */
enum CopalStatus copal_network_sparsity(const struct CopalNetwork *net, double *out);

/**
 * Perplexity on the corpus's evaluation split in windows of `seq_len`.
 *
 * # Safety
 * Handles must come from this library and `out` must be valid.
 */
enum CopalStatus copal_network_perplexity(const struct CopalNetwork *net,
                                          const struct CopalCorpus *corpus,
                                          size_t seq_len,
                                          double *out);

/**
 * Loads a byte corpus from a file. `eval_fraction` is the held-out suffix.
 *
 * # Safety
 * `path` and `name` must be NUL-terminated and `out` valid.
 */
enum CopalStatus copal_corpus_load(const char *path,
                                   const char *name,
                                   double eval_fraction,
                                   struct CopalCorpus **out);

/**
 * Builds a corpus from `len` bytes.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `name` must be NUL-terminated.
 */
enum CopalStatus copal_corpus_from_bytes(const char *name,
                                         const uint8_t *data,
                                         size_t len,
                                         double eval_fraction,
                                         struct CopalCorpus **out);

/**
 * # Safety
 * `corpus` must come from this library or be null.
 */
void copal_corpus_free(struct CopalCorpus *corpus);

/**
 * Starts a session. `criterion` is `copal`, `magnitude` or `wanda_style`;
 * `sparsity` is a ratio such as `0.5` or a pattern such as `2:4`.
 *
 * # Safety
 * `base` must come from this library; strings must be NUL-terminated.
 */
enum CopalStatus copal_pruner_new(const struct CopalNetwork *base,
                                  const char *criterion,
                                  const char *sparsity,
                                  uint64_t seed,
                                  struct CopalPruner **out);

/**
 * Samples `n_samples` calibration windows of `seq_len` tokens from the
 * corpus and runs one prune step. `stasis` receives 1 when no mask bit
 * changed versus the previous step, 0 otherwise, -1 on the first step; it
 * may be null.
 *
 * # Safety
 * Handles must come from this library; `stasis` must be valid or null.
 */
enum CopalStatus copal_pruner_step(struct CopalPruner *pruner,
                                   const struct CopalCorpus *corpus,
                                   size_t n_samples,
                                   size_t seq_len,
                                   int32_t *stasis);

/**
 * Copies the current pruned network into a new handle.
 *
 * # Safety
 * `pruner` must come from this library and `out` must be valid.
 */
enum CopalStatus copal_pruner_network(const struct CopalPruner *pruner, struct CopalNetwork **out);

/**
 * Writes the current masks in the packed mask format.
 *
 * # Safety
 * `pruner` must come from this library; `path` must be NUL-terminated.
 */
enum CopalStatus copal_pruner_export_masks(const struct CopalPruner *pruner, const char *path);

/**
 * Writes the accumulated importance state.
 *
 * # Safety
 * `pruner` must come from this library; `path` must be NUL-terminated.
 */
enum CopalStatus copal_pruner_save_state(const struct CopalPruner *pruner, const char *path);

/**
 * # Safety
 * `pruner` must come from this library or be null.
 */
void copal_pruner_free(struct CopalPruner *pruner);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COPAL_H */
