/* Generated by cbindgen from the falcon-capi crate — do not edit by hand. */

#ifndef FALCON_H
#define FALCON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Analog front-end design to apply before solving.
 */
typedef enum falcon_analog_mode {
  /**
   * `F = I`: digital precoders drive the antennas directly.
   */
  FALCON_ANALOG_MODE_FULLY_DIGITAL = 0,
  /**
   * Quantized per-entry conjugate matching (`l_tx`-phase alphabet).
   */
  FALCON_ANALOG_MODE_PHASE_MATCHED = 1,
  /**
   * Greedy assignment from a constant-modulus codebook.
   */
  FALCON_ANALOG_MODE_CODEBOOK_GREEDY = 2,
} falcon_analog_mode;

/**
 * Terminal state of a solver run (mirrors the solver's status enum).
 */
typedef enum falcon_run_status {
  FALCON_RUN_STATUS_CONVERGED = 0,
  FALCON_RUN_STATUS_ITERATION_CAP = 1,
  FALCON_RUN_STATUS_INFEASIBLE = 2,
  FALCON_RUN_STATUS_NUMERICAL_FAILURE = 3,
} falcon_run_status;

/**
 * Status code returned by every fallible call.
 */
typedef enum falcon_status {
  /**
   * Success.
   */
  FALCON_STATUS_OK = 0,
  /**
   * A parameter was out of range or inconsistent.
   */
  FALCON_STATUS_ERR_PARAMETER = 1,
  /**
   * The solver failed numerically beyond its internal retries.
   */
  FALCON_STATUS_ERR_NUMERICAL = 2,
  /**
   * A required pointer argument was null.
   */
  FALCON_STATUS_ERR_NULL_POINTER = 3,
  /**
   * An output buffer was too small; the required size was written to the
   * size out-parameter.
   */
  FALCON_STATUS_ERR_BUFFER_TOO_SMALL = 4,
} falcon_status;

/**
 * Opaque set of user channels.
 */
typedef struct falcon_channels falcon_channels;

/**
 * Opaque solver result.
 */
typedef struct falcon_solution falcon_solution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the current thread's last error message (NUL-terminated) into
 * `buf`. `*needed` receives the required buffer size including the NUL.
 * Returns `ErrBufferTooSmall` when `cap` is insufficient; the buffer is
 * untouched in that case.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes (or be null with `cap = 0`);
 * `needed` must be a valid pointer.
 */
enum falcon_status falcon_last_error_message(char *buf, size_t cap, size_t *needed);

/**
 * Library version as a static NUL-terminated string (never freed).
 */
const char *falcon_version(void);

/**
 * Draws `k_users` clustered-multipath channels over `n_tx` antennas with
 * `n_paths` paths per user. The draw is a pure function of `seed`.
 *
 * # Safety
 * `out` must be a valid pointer; on `Ok` it receives a handle that must be
 * released with [`falcon_channels_free`].
 */
enum falcon_status falcon_channels_random(uint64_t seed,
                                          size_t n_tx,
                                          size_t k_users,
                                          size_t n_paths,
                                          struct falcon_channels **out);

/**
 * Builds channels from caller data: `values` holds `k_users × n_tx`
 * complex entries as interleaved `(re, im)` doubles, user-major (user 0's
 * antennas first).
 *
 * # Safety
 * `values` must point to `2 * n_tx * k_users` readable doubles; `out` must
 * be a valid pointer and receives a handle to free with
 * [`falcon_channels_free`].
 */
enum falcon_status falcon_channels_from_array(const double *values,
                                              size_t n_tx,
                                              size_t k_users,
                                              struct falcon_channels **out);

/**
 * Releases a channels handle. Null is a no-op.
 *
 * # Safety
 * `handle` must come from a `falcon_channels_*` constructor and must not
 * be used after this call.
 */
void falcon_channels_free(struct falcon_channels *handle);

/**
 * Runs the relaxation solver on `channels`.
 *
 * `l_tx`, `codebook_size`, and `codebook_seed` are read only for the
 * analog modes that need them. `weights` may be null for equal weights;
 * otherwise it must hold one positive weight per user. `use_ldm != 0`
 * disables the unicast common parts.
 *
 * An infeasible instance is a *successful* call: inspect
 * [`falcon_solution_status`].
 *
 * # Safety
 * `channels` must be a live handle; `weights` null or pointing to
 * `k_users` readable doubles; `out` valid, receiving a handle to free with
 * [`falcon_solution_free`].
 */
enum falcon_status falcon_solve(const struct falcon_channels *channels,
                                enum falcon_analog_mode analog_mode,
                                size_t l_tx,
                                size_t codebook_size,
                                uint64_t codebook_seed,
                                double p_tx_mw,
                                double sigma2_mw,
                                double c0_min,
                                const double *weights,
                                int32_t use_ldm,
                                struct falcon_solution **out);

/**
 * Releases a solution handle. Null is a no-op.
 *
 * # Safety
 * `handle` must come from [`falcon_solve`] and must not be used after
 * this call.
 */
void falcon_solution_free(struct falcon_solution *handle);

/**
 * Terminal status of the run.
 *
 * # Safety
 * `handle` must be a live solution handle.
 */
enum falcon_run_status falcon_solution_status(const struct falcon_solution *handle);

/**
 * Weighted sum rate (bits/s/Hz); NaN when no iterate was produced.
 *
 * # Safety
 * `handle` must be a live solution handle.
 */
double falcon_solution_wsr(const struct falcon_solution *handle);

/**
 * Number of outer iterations the run used.
 *
 * # Safety
 * `handle` must be a live solution handle.
 */
size_t falcon_solution_iterations(const struct falcon_solution *handle);

/**
 * Copies the per-user total unicast rates (private + common part) into
 * `buf`. `*needed` receives the user count. Returns `ErrBufferTooSmall`
 * when `cap` is insufficient; the buffer is untouched in that case.
 *
 * # Safety
 * `handle` live; `buf` pointing to `cap` writable doubles (or null with
 * `cap = 0`); `needed` valid.
 */
enum falcon_status falcon_solution_unicast_rates(const struct falcon_solution *handle,
                                                 double *buf,
                                                 size_t cap,
                                                 size_t *needed);

/**
 * Serializes the full solution to JSON using the two-call sizing
 * convention: call with `cap = 0` to learn the required size (including
 * the terminating NUL), then call again with a buffer of that size.
 *
 * # Safety
 * `handle` live; `buf` pointing to `cap` writable bytes (or null with
 * `cap = 0`); `needed` valid.
 */
enum falcon_status falcon_solution_json(const struct falcon_solution *handle,
                                        char *buf,
                                        size_t cap,
                                        size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FALCON_H */
