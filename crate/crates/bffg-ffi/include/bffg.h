#ifndef BFFG_H
#define BFFG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum BffgStatus {
  BFFG_STATUS_OK = 0,
  BFFG_STATUS_NULL_POINTER = 1,
  BFFG_STATUS_INVALID_UTF8 = 2,
  BFFG_STATUS_PARSE = 3,
  BFFG_STATUS_INVALID_GRAPH = 4,
  BFFG_STATUS_UNSUPPORTED = 5,
  BFFG_STATUS_NUMERICAL = 6,
  BFFG_STATUS_ZERO_WEIGHT = 7,
  BFFG_STATUS_CONFIG = 8,
  BFFG_STATUS_IO = 9,
  BFFG_STATUS_OUT_OF_RANGE = 10,
  BFFG_STATUS_BUFFER_TOO_SMALL = 11,
  BFFG_STATUS_PANIC = 12,
} BffgStatus;

// Result of an exact backward pass; keeps its graph alive.
typedef struct BffgBackward BffgBackward;

// A validated transition graph.
typedef struct BffgGraph BffgGraph;

// One guided forward sample.
typedef struct BffgSample BffgSample;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL, or
// 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t bffg_last_error(char *buf, size_t len);

// Parses and validates a JSON graph document.
//
// # Safety
// `json` must be a NUL-terminated string; `graph` must be writable.
enum BffgStatus bffg_graph_from_json(const char *json, struct BffgGraph **graph);

// # Safety
// `graph` must be null or a handle from [`bffg_graph_from_json`] that has
// not been freed.
void bffg_graph_free(struct BffgGraph *graph);

// Number of vertices, root and leaves included.
//
// # Safety
// Pointers must be valid.
enum BffgStatus bffg_graph_vertex_count(const struct BffgGraph *graph, size_t *count);

// Dense index of the vertex with the given id, as used by the sample
// accessors.
//
// # Safety
// Pointers must be valid.
enum BffgStatus bffg_graph_index_of(const struct BffgGraph *graph, uint64_t id, size_t *index);

// Runs the backward pass with every guiding kernel equal to its forward
// kernel.
//
// # Safety
// `graph` must be a live handle; `backward` must be writable.
enum BffgStatus bffg_backward_exact(const struct BffgGraph *graph, struct BffgBackward **backward);

// # Safety
// `backward` must be null or a live handle.
void bffg_backward_free(struct BffgBackward *backward);

// `log h̃₀` at the root value.
//
// # Safety
// Pointers must be valid.
enum BffgStatus bffg_backward_log_h0(const struct BffgBackward *backward, double *log_h0);

// Self-normalised evidence estimate from `draws` guided samples.
//
// # Safety
// Pointers must be valid.
enum BffgStatus bffg_evidence_estimate(const struct BffgBackward *backward,
                                       size_t draws,
                                       uint64_t seed,
                                       double *log_evidence,
                                       double *log_se);

// Draws one guided forward sample.
//
// # Safety
// `backward` must be a live handle; `sample` must be writable.
enum BffgStatus bffg_forward(const struct BffgBackward *backward,
                             uint64_t seed,
                             struct BffgSample **sample);

// # Safety
// `sample` must be null or a live handle.
void bffg_sample_free(struct BffgSample *sample);

// `log Ψ` of the sample: `log h̃₀` plus the summed log-weights.
//
// # Safety
// Pointers must be valid.
enum BffgStatus bffg_sample_log_psi(const struct BffgSample *sample, double *log_psi);

// Writes the value at vertex index `index` into `buf`. Real vectors are
// copied as is; labels are written as doubles and tuples are
// flattened in order. `written` receives the number of components, which is
// also set when the buffer is too small.
//
// # Safety
// `buf` must point to `len` writable doubles; other pointers must be valid.
enum BffgStatus bffg_sample_value(const struct BffgSample *sample,
                                  size_t index,
                                  double *buf,
                                  size_t len,
                                  size_t *written);

// Runs the S/I/R experiment described by the JSON configuration (null for
// defaults) and writes its artifacts into `out_dir`.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out_dir` must be a
// NUL-terminated string.
enum BffgStatus bffg_sir_run(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFFG_H */
