#ifndef SHEAF_DYNAMICS_H
#define SHEAF_DYNAMICS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdStatus {
  SD_STATUS_OK = 0,
  SD_STATUS_NULL_POINTER = 1,
  SD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or inconsistent input (JSON, shapes, indices).
   */
  SD_STATUS_VALIDATION = 3,
  SD_STATUS_NON_CONVERGENCE = 4,
  /**
   * Any other numerical failure.
   */
  SD_STATUS_NUMERICAL = 5,
  SD_STATUS_IO = 6,
  SD_STATUS_BUFFER_TOO_SMALL = 7,
  SD_STATUS_PANIC = 8,
} SdStatus;

/**
 * Opaque sheaf handle. Free with [`sd_sheaf_free`].
 */
typedef struct SdSheaf SdSheaf;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library from the same thread.
 */
const char *sd_last_error_message(void);

/**
 * Builds a sheaf.
 *
 * `edges` holds `2 * n_edges` vertex indices `(u0, v0, u1, v1, ...)`.
 * `maps` concatenates, per edge, the row-major map out of `u`
 * (`edge_dims[e] x vertex_dims[u]`) followed by the map out of `v`;
 * `maps_len` must equal the total entry count.
 *
 * # Safety
 * Every pointer must reference at least the stated number of readable
 * elements; `out` must be writable.
 */
enum SdStatus sd_sheaf_new(size_t n_vertices,
                           const size_t *vertex_dims,
                           size_t n_edges,
                           const size_t *edges,
                           const size_t *edge_dims,
                           const double *maps,
                           size_t maps_len,
                           struct SdSheaf **out);

/**
 * Builds a sheaf from JSON in the scenario `sheaf` schema.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum SdStatus sd_sheaf_from_json(const char *json, struct SdSheaf **out);

/**
 * # Safety
 * `sheaf` must be NULL or a handle from this library not yet freed.
 */
void sd_sheaf_free(struct SdSheaf *sheaf);

/**
 * # Safety
 * `sheaf` must be a live handle; each output pointer may be NULL to skip it.
 */
enum SdStatus sd_sheaf_dims(const struct SdSheaf *sheaf,
                            size_t *n_vertices,
                            size_t *n_edges,
                            size_t *total_vertex_dim,
                            size_t *total_edge_dim);

/**
 * Dense coboundary, `total_edge_dim x total_vertex_dim`, row-major.
 *
 * # Safety
 * `out` must reference `out_len` writable doubles.
 */
enum SdStatus sd_sheaf_coboundary(const struct SdSheaf *sheaf, double *out, size_t out_len);

/**
 * Dense sheaf Laplacian, `total_vertex_dim` squared, row-major.
 *
 * # Safety
 * `out` must reference `out_len` writable doubles.
 */
enum SdStatus sd_sheaf_laplacian(const struct SdSheaf *sheaf, double *out, size_t out_len);

/**
 * `dim H^0`. Pass `tol <= 0` for the default relative tolerance.
 *
 * # Safety
 * `out` must be writable.
 */
enum SdStatus sd_sheaf_h0_dim(const struct SdSheaf *sheaf, double tol, size_t *out);

/**
 * Orthogonal projection of `x0` onto `H^0`: the heat-equation limit.
 *
 * # Safety
 * `x0` and `out` must reference `len` doubles.
 */
enum SdStatus sd_diffusion_limit(const struct SdSheaf *sheaf,
                                 const double *x0,
                                 size_t len,
                                 double *out);

/**
 * Minimum-norm harmonic extension of `u` from the `boundary` vertices.
 * `u` stacks the boundary stalks in increasing vertex order; `out` receives
 * the full 0-cochain.
 *
 * # Safety
 * Pointers must reference the stated number of elements.
 */
enum SdStatus sd_harmonic_extend(const struct SdSheaf *sheaf,
                                 const size_t *boundary,
                                 size_t n_boundary,
                                 const double *u,
                                 size_t u_len,
                                 double *out,
                                 size_t out_len);

/**
 * Stabilizability with inputs on the given vertices. Writes the
 * cohomological verdict and the Hautus rank verdict (1 = stabilizable).
 *
 * # Safety
 * `inputs` must reference `n_inputs` indices; outputs may be NULL.
 */
enum SdStatus sd_stabilizable(const struct SdSheaf *sheaf,
                              const size_t *inputs,
                              size_t n_inputs,
                              bool *cohomology_verdict,
                              bool *rank_verdict);

/**
 * Nearest sheaf (in Frobenius norm) for which `x` is a global section.
 *
 * # Safety
 * `x` must reference `len` doubles; `out` must be writable.
 */
enum SdStatus sd_expression_limit(const struct SdSheaf *sheaf,
                                  const double *x,
                                  size_t len,
                                  struct SdSheaf **out);

/**
 * Runs a scenario given as JSON text and writes its outputs into `out_dir`.
 * Returns `NonConvergence` (outputs still written) when a flow did not settle.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum SdStatus sd_run_scenario(const char *scenario_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHEAF_DYNAMICS_H */
