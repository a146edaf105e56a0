#ifndef LARGEN_SIGMA_H
#define LARGEN_SIGMA_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define LS_REGULATOR_EXPONENTIAL 0

#define LS_REGULATOR_SHARP 1

#define LS_PROFILE_QUICK 0

#define LS_PROFILE_FULL 1

/**
 * Field configuration on a square lattice region.
 */
typedef struct LsField LsField;

/**
 * Derived model parameters.
 */
typedef struct LsParams LsParams;

typedef int32_t LsStatus;

#define LS_OK 0

#define LS_ERR_NULL 1

#define LS_ERR_INVALID 2

#define LS_ERR_NUMERICAL 3

#define LS_ERR_SIGN_PROBLEM 4

#define LS_ERR_IO 5

#define LS_ERR_PANIC 6

/**
 * The output buffer was too small; the required length is reported.
 */
#define LS_ERR_BUFFER 7

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated).
 *
 * # Safety
 * `buf` must point to `len` writable bytes; `required` may be null.
 */
LsStatus ls_last_error_message(char *buf, size_t len, size_t *required);

/**
 * Solve the gap equation for m².
 *
 * # Safety
 * `m2` must be a valid pointer to a double.
 */
LsStatus ls_gap_solve(double lambda, double big_k, int32_t regulator_code, double *m2);

/**
 * Create a parameter handle from (λ, K, N).
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`ls_params_free`].
 */
LsStatus ls_params_new(double lambda,
                       double big_k,
                       uint64_t big_n,
                       int32_t regulator_code,
                       struct LsParams **out);

/**
 * Replace the corridor width M of a parameter handle.
 *
 * # Safety
 * `params` must be a live handle.
 */
LsStatus ls_params_set_corridor(struct LsParams *params, double corridor_m);

/**
 * Read m, g, ε and c_m from a parameter handle; any out-pointer may be null.
 *
 * # Safety
 * `params` must be a live handle; non-null out-pointers must be valid.
 */
LsStatus ls_params_get(const struct LsParams *params,
                       double *m,
                       double *g,
                       double *epsilon,
                       double *c_m);

/**
 * # Safety
 * `params` must be null or a handle from [`ls_params_new`] not yet freed.
 */
void ls_params_free(struct LsParams *params);

/**
 * Free propagator F(r) for mass m.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LsStatus ls_propagator_radial(double m, double r, double *out);

/**
 * Unregulated bubble π̂(p²) at coupling λK and mass m.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LsStatus ls_bubble(double p2, double lambda_k, double m, double *out);

/**
 * Field on Λ = [−n, n]² with `sites_per_side`² sites per unit square.
 *
 * # Safety
 * `tau` must point to `len` doubles; `out` must be a valid pointer.
 */
LsStatus ls_field_new(size_t n,
                      size_t sites_per_side,
                      const double *tau,
                      size_t len,
                      struct LsField **out);

/**
 * Number of lattice sites of a field.
 *
 * # Safety
 * `field` must be a live handle and `out` valid.
 */
LsStatus ls_field_num_sites(const struct LsField *field, size_t *out);

/**
 * # Safety
 * `field` must be null or a handle from [`ls_field_new`] not yet freed.
 */
void ls_field_free(struct LsField *field);

/**
 * Classify squares and build regions; report counts of large squares,
 * connected components and corridor squares.
 *
 * # Safety
 * Handles must be live; out-pointers valid.
 */
LsStatus ls_decompose(const struct LsParams *params,
                      const struct LsField *field,
                      size_t *large,
                      size_t *components,
                      size_t *corridor);

/**
 * Connectivity factor of an overlap graph, by graph sum and by tree formula.
 *
 * # Safety
 * `edges` must point to `2 * n_edges` indices; out-pointers valid.
 */
LsStatus ls_mayer_factor(size_t q,
                         const uint32_t *edges,
                         size_t n_edges,
                         double *by_graphs,
                         double *by_trees);

/**
 * Largest polymer activity ρ* with the summed bound at most 1/2.
 *
 * # Safety
 * Out-pointers must be valid.
 */
LsStatus ls_activity_threshold(size_t max_size, double *rho, double *total);

/**
 * Reweighted two-point estimate on Λ = [−n, n]²; returns the fitted m′ and m′/m.
 *
 * # Safety
 * `params` must be a live handle; out-pointers valid.
 */
LsStatus ls_twopoint(const struct LsParams *params,
                     size_t n,
                     size_t sites_per_side,
                     size_t samples,
                     uint64_t seed,
                     double window_lo,
                     double window_hi,
                     double *mprime,
                     double *ratio);

/**
 * Run one acceptance criterion (1–12); `passed` is set to 1 or 0.
 *
 * # Safety
 * `passed` must be a valid pointer.
 */
LsStatus ls_acceptance_run(uint32_t criterion, int32_t profile, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LARGEN_SIGMA_H */
