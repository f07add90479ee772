#ifndef ARGEM_H
#define ARGEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ArgemStatus {
  ARGEM_STATUS_OK = 0,
  ARGEM_STATUS_NULL_POINTER = 1,
  ARGEM_STATUS_INVALID_ARGUMENT = 2,
  ARGEM_STATUS_PARSE = 3,
  ARGEM_STATUS_IO = 4,
  ARGEM_STATUS_CONTRACT = 5,
  ARGEM_STATUS_CONFIG = 6,
  ARGEM_STATUS_DIVERGED = 7,
  ARGEM_STATUS_CHECKPOINT = 8,
  ARGEM_STATUS_SHAPE = 9,
  ARGEM_STATUS_NUMERIC = 10,
  ARGEM_STATUS_PANIC = 11,
} ArgemStatus;

/*
 An attributed graph.
 */
typedef struct ArgemGraph ArgemGraph;

/*
 A trained model together with the split it was trained on.
 */
typedef struct ArgemModel ArgemModel;

typedef struct ArgemClusterScores {
  double acc;
  double nmi;
  double f1;
  double precision;
  double ari;
} ArgemClusterScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer stays
 valid until the next `argem_*` call on the same thread.
 */
const char *argem_last_error_message(void);

/*
 Loads a citation dataset from a `.content` and a `.cites` file.

 # Safety
 Paths must be nul-terminated strings and `out` a writable pointer.
 */
enum ArgemStatus argem_graph_load(const char *content_path,
                                  const char *cites_path,
                                  struct ArgemGraph **out);

/*
 Builds a graph from row-major `num_nodes x num_features` features and
 `num_edges` node pairs stored as `2 * num_edges` indices. `labels` may be
 null; otherwise it holds one class per node.

 # Safety
 Arrays must hold the stated number of elements and `out` be writable.
 */
enum ArgemStatus argem_graph_from_arrays(size_t num_nodes,
                                         size_t num_features,
                                         const double *features,
                                         size_t num_edges,
                                         const size_t *edges,
                                         const size_t *labels,
                                         struct ArgemGraph **out);

/*
 # Safety
 `graph` must be null or a handle from this library, not yet freed.
 */
void argem_graph_free(struct ArgemGraph *graph);

/*
 Node, undirected edge and feature counts.

 # Safety
 `graph` must be a live handle; output pointers may be null.
 */
enum ArgemStatus argem_graph_shape(const struct ArgemGraph *graph,
                                   size_t *num_nodes,
                                   size_t *num_edges,
                                   size_t *num_features);

/*
 Trains on `graph` after holding out `val_frac` and `test_frac` of its
 edges. `config_toml` may be null for the defaults, or a TOML document
 overriding training settings such as `variant`, `epochs` and `seed`.

 # Safety
 `graph` must be a live handle, `config_toml` null or nul-terminated, and
 `out` writable.
 */
enum ArgemStatus argem_train(const struct ArgemGraph *graph,
                             const char *config_toml,
                             double val_frac,
                             double test_frac,
                             struct ArgemModel **out);

/*
 # Safety
 `model` must be null or a handle from this library, not yet freed.
 */
void argem_model_free(struct ArgemModel *model);

/*
 Embedding rows and columns.

 # Safety
 `model` must be a live handle and the outputs writable.
 */
enum ArgemStatus argem_model_embedding_shape(const struct ArgemModel *model,
                                             size_t *rows,
                                             size_t *cols);

/*
 Copies the row-major embedding into `buf`, which must hold exactly
 `rows * cols` values.

 # Safety
 `model` must be a live handle and `buf` hold `len` writable doubles.
 */
enum ArgemStatus argem_model_embedding(const struct ArgemModel *model, double *buf, size_t len);

/*
 Test-edge AUC and AP. Fails for models loaded from a checkpoint or trained
 without held-out edges.

 # Safety
 `model` must be a live handle and the outputs writable.
 */
enum ArgemStatus argem_model_link_scores(const struct ArgemModel *model, double *auc, double *ap);

/*
 K-means on the embedding with one cluster per class of `graph`, scored
 against its labels.

 # Safety
 Handles must be live and `out` writable.
 */
enum ArgemStatus argem_model_cluster_scores(const struct ArgemModel *model,
                                            const struct ArgemGraph *graph,
                                            uint64_t seed,
                                            struct ArgemClusterScores *out);

/*
 Writes a checkpoint.

 # Safety
 `model` must be a live handle and `path` nul-terminated.
 */
enum ArgemStatus argem_model_save(const struct ArgemModel *model, const char *path);

/*
 Loads a checkpoint. The returned model exposes its embedding and cluster
 scores; link scores need the training graph and are unavailable.

 # Safety
 `path` must be nul-terminated and `out` writable.
 */
enum ArgemStatus argem_model_load(const char *path, struct ArgemModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARGEM_H */
