#ifndef INSITU_H
#define INSITU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum InsituStatus {
  INSITU_STATUS_OK = 0,
  INSITU_STATUS_NULL_POINTER = 1,
  INSITU_STATUS_INVALID_ARGUMENT = 2,
  INSITU_STATUS_CONFIG = 3,
  INSITU_STATUS_RUN = 4,
  INSITU_STATUS_FORMAT = 5,
  INSITU_STATUS_IO = 6,
  INSITU_STATUS_PANIC = 7,
} InsituStatus;

/**
 * One-dimensional GLL basis.
 */
typedef struct InsituBasis InsituBasis;

/**
 * Proxy simulation state plus its worker group.
 */
typedef struct InsituSim InsituSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *insitu_last_error(void);

/**
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum InsituStatus insitu_basis_new(size_t order, struct InsituBasis **out);

/**
 * # Safety
 * `basis` must be null or a handle from [`insitu_basis_new`] not yet freed.
 */
void insitu_basis_free(struct InsituBasis *basis);

/**
 * Nodes per axis, `p + 1`; 0 for a null handle.
 *
 * # Safety
 * `basis` must be null or a live handle.
 */
size_t insitu_basis_len(const struct InsituBasis *basis);

/**
 * Copies the `p + 1` GLL nodes into `out`.
 *
 * # Safety
 * `basis` must be a live handle; `out` valid for `len` writes.
 */
enum InsituStatus insitu_basis_nodes(const struct InsituBasis *basis, double *out, size_t len);

/**
 * Copies the `p + 1` GLL weights into `out`.
 *
 * # Safety
 * `basis` must be a live handle; `out` valid for `len` writes.
 */
enum InsituStatus insitu_basis_weights(const struct InsituBasis *basis, double *out, size_t len);

/**
 * Nodal values of one element (x fastest) to Legendre coefficients.
 *
 * # Safety
 * `values` and `coeffs` must each hold `len = (p + 1)^3` doubles.
 */
enum InsituStatus insitu_dlt_forward(const struct InsituBasis *basis,
                                     const double *values,
                                     double *coeffs,
                                     size_t len);

/**
 * Legendre coefficients of one element back to nodal values.
 *
 * # Safety
 * `coeffs` and `values` must each hold `len = (p + 1)^3` doubles.
 */
enum InsituStatus insitu_dlt_inverse(const struct InsituBasis *basis,
                                     const double *coeffs,
                                     double *values,
                                     size_t len);

/**
 * Truncates and encodes `n_elements` elements of nodal values into an
 * archive. `codec` is 0 for raw, 1 for deflate. The archive is returned in
 * `*out_buf` / `*out_len` and must be released with [`insitu_buffer_free`].
 *
 * # Safety
 * `values` must hold `n_elements * (p + 1)^3` doubles; `field_name` must be
 * NUL-terminated; `out_buf` and `out_len` valid for one write each.
 */
enum InsituStatus insitu_compress(const struct InsituBasis *basis,
                                  const double *values,
                                  size_t n_elements,
                                  double epsilon,
                                  uint8_t codec,
                                  const char *field_name,
                                  uint8_t **out_buf,
                                  size_t *out_len);

/**
 * # Safety
 * `buf`/`len` must come from [`insitu_compress`] and not be freed yet.
 */
void insitu_buffer_free(uint8_t *buf, size_t len);

/**
 * Decodes an archive into nodal values. With `out` NULL only the required
 * number of doubles is stored in `*out_count`. A short buffer fails with
 * `INVALID_ARGUMENT` and also reports the required count.
 *
 * # Safety
 * `bytes` must hold `len` bytes; `out` null or valid for `capacity` writes;
 * `out_count` valid for one write.
 */
enum InsituStatus insitu_decompress(const uint8_t *bytes,
                                    size_t len,
                                    double *out,
                                    size_t capacity,
                                    size_t *out_count);

/**
 * Creates a simulation from a mesh config JSON object (`"{}"` for the
 * defaults), stepping on `workers` threads.
 *
 * # Safety
 * `mesh_json` must be NUL-terminated; `out` valid for one write.
 */
enum InsituStatus insitu_sim_new(const char *mesh_json, size_t workers, struct InsituSim **out);

/**
 * # Safety
 * `sim` must be null or a handle from [`insitu_sim_new`] not yet freed.
 */
void insitu_sim_free(struct InsituSim *sim);

/**
 * Advances the simulation by `steps` steps.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum InsituStatus insitu_sim_step(struct InsituSim *sim, uint64_t steps);

/**
 * # Safety
 * `sim` must be null or a live handle.
 */
size_t insitu_sim_element_count(const struct InsituSim *sim);

/**
 * # Safety
 * `sim` must be null or a live handle.
 */
uint64_t insitu_sim_step_index(const struct InsituSim *sim);

/**
 * Copies one field (0 pressure, 1..3 velocity x..z), element by element.
 *
 * # Safety
 * `sim` must be a live handle; `out` valid for `len` writes, where `len`
 * is element count times `(p + 1)^3`.
 */
enum InsituStatus insitu_sim_copy_field(const struct InsituSim *sim,
                                        uint32_t field,
                                        double *out,
                                        size_t len);

/**
 * Runs an engine config given as JSON. On success `*summary_json` holds a
 * JSON object with the timing summary and output digests; release it with
 * [`insitu_string_free`].
 *
 * # Safety
 * `config_json` must be NUL-terminated; `summary_json` valid for one write.
 */
enum InsituStatus insitu_run_config(const char *config_json, char **summary_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void insitu_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INSITU_H */
