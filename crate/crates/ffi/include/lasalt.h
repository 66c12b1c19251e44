#ifndef LASALT_H
#define LASALT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LasaltStatus {
  LASALT_STATUS_OK = 0,
  LASALT_STATUS_NULL_POINTER = 1,
  LASALT_STATUS_INVALID_ARGUMENT = 2,
  LASALT_STATUS_CONFIG = 3,
  LASALT_STATUS_NUMERICAL = 4,
  LASALT_STATUS_IO = 5,
  LASALT_STATUS_FORMAT = 6,
  LASALT_STATUS_HASH_MISMATCH = 7,
  LASALT_STATUS_VERIFY_FAILED = 8,
  LASALT_STATUS_PANIC = 9,
} LasaltStatus;

/**
 * Periodic grid.
 */
typedef struct LasaltGrid LasaltGrid;

/**
 * Noise basis on a grid.
 */
typedef struct LasaltNoise LasaltNoise;

/**
 * Stored expectation trajectory.
 */
typedef struct LasaltTrajectory LasaltTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread (empty after a
 * success). Valid until the next call on the same thread.
 */
const char *lasalt_last_error(void);

/**
 * Creates an `n x n` grid of period `length` (pass 0 for 2 pi).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum LasaltStatus lasalt_grid_new(uint32_t n, double length, struct LasaltGrid **out);

/**
 * # Safety
 * `grid` must come from [`lasalt_grid_new`] and not be used afterwards.
 */
void lasalt_grid_free(struct LasaltGrid *grid);

/**
 * Number of nodes `n * n`, or 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t lasalt_grid_nodes(const struct LasaltGrid *grid);

/**
 * Builds a noise basis from its JSON description, for example
 * `"canonical(0.1)"` (with the quotes) or a list of fields.
 *
 * # Safety
 * `grid` must be live, `spec_json` a nul-terminated string and `out` writable.
 */
enum LasaltStatus lasalt_noise_new(const struct LasaltGrid *grid,
                                   const char *spec_json,
                                   struct LasaltNoise **out);

/**
 * # Safety
 * `noise` must come from [`lasalt_noise_new`] and not be used afterwards.
 */
void lasalt_noise_free(struct LasaltNoise *noise);

/**
 * Ellipticity constant of the basis.
 *
 * # Safety
 * `noise` must be live and `out` writable.
 */
enum LasaltStatus lasalt_noise_lambda_min(const struct LasaltNoise *noise, double *out);

/**
 * `out = xi . grad f` for a vector field `xi` (2 nodes values) and scalar `f`.
 *
 * # Safety
 * Arrays must hold `2 * nodes`, `nodes` and `nodes` values respectively.
 */
enum LasaltStatus lasalt_lie_scalar(const struct LasaltGrid *grid,
                                    const double *xi,
                                    const double *f,
                                    double *out);

/**
 * `out = sum_k L_k L_k f` over the basis.
 *
 * # Safety
 * `f` and `out` must hold `nodes` values of the basis grid.
 */
enum LasaltStatus lasalt_double_lie_scalar(const struct LasaltNoise *noise,
                                           const double *f,
                                           double *out);

/**
 * Mean-free, divergence-free velocity with curl `omega`; `out` holds
 * `2 * nodes` values.
 *
 * # Safety
 * `omega` must hold `nodes` values and `out` twice that.
 */
enum LasaltStatus lasalt_biot_savart(const struct LasaltGrid *grid,
                                     const double *omega,
                                     double *out);

/**
 * Runs the expectation solve described by a configuration document.
 *
 * # Safety
 * `config_json` must be a nul-terminated string and `out` writable.
 */
enum LasaltStatus lasalt_expectation_run(const char *config_json, struct LasaltTrajectory **out);

/**
 * Loads a trajectory directory written by `lasalt expectation`.
 *
 * # Safety
 * `dir` must be a nul-terminated path and `out` writable.
 */
enum LasaltStatus lasalt_trajectory_load(const char *dir, struct LasaltTrajectory **out);

/**
 * Writes `meta.json` and LSF1 snapshots into `dir`.
 *
 * # Safety
 * `traj` must be live and `dir` a nul-terminated path.
 */
enum LasaltStatus lasalt_trajectory_save(const struct LasaltTrajectory *traj, const char *dir);

/**
 * # Safety
 * `traj` must come from this library and not be used afterwards.
 */
void lasalt_trajectory_free(struct LasaltTrajectory *traj);

/**
 * Number of stored snapshots and the grid size `n`.
 *
 * # Safety
 * `traj` must be live; the outputs must be writable.
 */
enum LasaltStatus lasalt_trajectory_shape(const struct LasaltTrajectory *traj,
                                          size_t *snapshots,
                                          uint32_t *grid_n);

/**
 * Copies snapshot `index` of `Theta` and its time into caller storage.
 *
 * # Safety
 * `out` must hold `len` values, `len >= n * n`; `time` may be null.
 */
enum LasaltStatus lasalt_trajectory_theta(const struct LasaltTrajectory *traj,
                                          size_t index,
                                          double *out,
                                          size_t len,
                                          double *time);

/**
 * Runs the acceptance ladder. `config_json` may be null for the built-in
 * desk configuration. The report is returned in `report_json` (free it
 * with [`lasalt_string_free`]) even when criteria fail, in which case the
 * status is `VerifyFailed`.
 *
 * # Safety
 * `config_json` must be null or nul-terminated; `report_json` writable.
 */
enum LasaltStatus lasalt_verify(const char *config_json, char **report_json);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or come from this library, and not be used afterwards.
 */
void lasalt_string_free(char *s);

/**
 * Writes one LSF1 snapshot of `n_components * grid_n^2` values.
 *
 * # Safety
 * `path` must be nul-terminated and `values` hold the stated count.
 */
enum LasaltStatus lasalt_lsf1_write(const char *path,
                                    uint32_t grid_n,
                                    uint32_t n_components,
                                    uint64_t step_index,
                                    double time,
                                    const double *values);

/**
 * Header of an LSF1 file. Any output pointer may be null.
 *
 * # Safety
 * `path` must be nul-terminated; non-null outputs must be writable.
 */
enum LasaltStatus lasalt_lsf1_read_header(const char *path,
                                          uint32_t *grid_n,
                                          uint32_t *n_components,
                                          uint64_t *step_index,
                                          double *time);

/**
 * Values of an LSF1 file into a buffer of `len` values.
 *
 * # Safety
 * `path` must be nul-terminated and `out` hold `len` values.
 */
enum LasaltStatus lasalt_lsf1_read_values(const char *path, double *out, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LASALT_H */
