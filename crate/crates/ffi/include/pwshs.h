#ifndef PWSHS_H
#define PWSHS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PwshsStatus {
  PWSHS_STATUS_OK = 0,
  PWSHS_STATUS_NULL_POINTER = 1,
  PWSHS_STATUS_INVALID_ARGUMENT = 2,
  PWSHS_STATUS_CONFIG = 3,
  PWSHS_STATUS_NUMERICAL = 4,
  PWSHS_STATUS_IO = 5,
  PWSHS_STATUS_PANIC = 6,
} PwshsStatus;

/**
 * Opaque particle belief plus the filter settings it was created with.
 */
typedef struct PwshsBelief PwshsBelief;

/**
 * Opaque trained model.
 */
typedef struct PwshsModel PwshsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread; empty if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *pwshs_last_error(void);

/**
 * Load a model directory written by `pwshs train`.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out` must be writable.
 */
enum PwshsStatus pwshs_model_load(const char *dir, struct PwshsModel **out);

/**
 * # Safety
 * `model` must come from [`pwshs_model_load`] and not be freed twice.
 */
void pwshs_model_free(struct PwshsModel *model);

/**
 * Number of modes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pwshs_model_num_modes(const struct PwshsModel *model);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pwshs_model_dim(const struct PwshsModel *model);

/**
 * Create a belief with `particles` particles around `x0`.
 * `obs_noise` is the observation noise variance.
 *
 * # Safety
 * `x0` must point to `dim` doubles; `out` must be writable.
 */
enum PwshsStatus pwshs_belief_new(const struct PwshsModel *model,
                                  const double *x0,
                                  size_t dim,
                                  size_t particles,
                                  double obs_noise,
                                  uint64_t seed,
                                  struct PwshsBelief **out);

/**
 * # Safety
 * `belief` must come from [`pwshs_belief_new`] and not be freed twice.
 */
void pwshs_belief_free(struct PwshsBelief *belief);

/**
 * Advance the belief one step through the model.
 *
 * # Safety
 * Both handles must be live.
 */
enum PwshsStatus pwshs_belief_propagate(struct PwshsBelief *belief,
                                        const struct PwshsModel *model,
                                        uint64_t seed);

/**
 * Condition on an observation. `diverged` (optional) receives 1 when every
 * weight underflowed and the belief fell back to uniform weights.
 *
 * # Safety
 * `obs` must point to `dim` doubles; `diverged` may be null.
 */
enum PwshsStatus pwshs_belief_update(struct PwshsBelief *belief,
                                     const double *obs,
                                     size_t dim,
                                     uint64_t seed,
                                     int32_t *diverged);

/**
 * Copy the posterior mode probabilities into `out[0..len]`; `len` must equal
 * the model's mode count.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum PwshsStatus pwshs_belief_mode_weights(const struct PwshsBelief *belief,
                                           double *out,
                                           size_t len);

/**
 * Copy the weighted particle mean into `out[0..len]`; `len` must equal the
 * state dimension.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum PwshsStatus pwshs_belief_mean(const struct PwshsBelief *belief, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PWSHS_H */
