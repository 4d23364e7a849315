#ifndef SPHLAT_H
#define SPHLAT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SphlatStatus {
  SPHLAT_STATUS_OK = 0,
  SPHLAT_STATUS_NULL_POINTER = 1,
  SPHLAT_STATUS_INVALID_ARGUMENT = 2,
  SPHLAT_STATUS_DOMAIN = 3,
  SPHLAT_STATUS_FORMAT = 4,
  SPHLAT_STATUS_IO = 5,
  SPHLAT_STATUS_NOT_FOUND = 6,
  SPHLAT_STATUS_BUFFER_TOO_SMALL = 7,
  SPHLAT_STATUS_PANIC = 8,
} SphlatStatus;

/**
 * Opaque in-memory checkpoint.
 */
typedef struct SphlatCheckpoint SphlatCheckpoint;

/**
 * Opaque Power Spherical distribution.
 */
typedef struct SphlatPowerSpherical SphlatPowerSpherical;

/**
 * Opaque seeded random stream.
 */
typedef struct SphlatRng SphlatRng;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *sphlat_last_error(void);

/**
 * Stream `index` of `seed`; streams of one seed are independent.
 */
struct SphlatRng *sphlat_rng_new(uint64_t seed, uint64_t index);

/**
 * # Safety
 * `rng` must come from [`sphlat_rng_new`] and not be used afterwards.
 */
void sphlat_rng_free(struct SphlatRng *rng);

/**
 * # Safety
 * `mu` must point to `dim` doubles and `out` must be writable.
 */
enum SphlatStatus sphlat_ps_new(const double *mu,
                                size_t dim,
                                double kappa,
                                struct SphlatPowerSpherical **out_handle);

/**
 * # Safety
 * `ps` must come from [`sphlat_ps_new`] and not be used afterwards.
 */
void sphlat_ps_free(struct SphlatPowerSpherical *ps);

/**
 * # Safety
 * `u` must point to `dim` doubles with unit norm.
 */
enum SphlatStatus sphlat_ps_log_density(const struct SphlatPowerSpherical *ps,
                                        const double *u,
                                        size_t dim,
                                        double *out_value);

/**
 * Draw one direction into `out_u` (`dim` doubles).
 *
 * # Safety
 * Handles must be live; `out_u` must hold `dim` doubles.
 */
enum SphlatStatus sphlat_ps_sample(const struct SphlatPowerSpherical *ps,
                                   struct SphlatRng *rng,
                                   double *out_u,
                                   size_t dim);

/**
 * `E[μᵀu]`.
 *
 * # Safety
 * `ps` must be live or null.
 */
enum SphlatStatus sphlat_ps_mean_cosine(const struct SphlatPowerSpherical *ps, double *out_value);

/**
 * # Safety
 * `mu` and `u` must point to `dim` doubles; `u` must have unit norm.
 */
enum SphlatStatus sphlat_vmf_log_density(const double *mu,
                                         const double *u,
                                         size_t dim,
                                         double kappa,
                                         double *out_value);

/**
 * `R·z/max(‖z‖, ε)` into `out_z`; `guard_fired` is set when `‖z‖ < ε`.
 *
 * # Safety
 * `z` and `out_z` must hold `dim` doubles; `guard_fired` may be null.
 */
enum SphlatStatus sphlat_project_to_sphere(const double *z,
                                           size_t dim,
                                           double radius,
                                           double *out_z,
                                           bool *guard_fired);

/**
 * `(I − z̄z̄ᵀ/R²) v` for on-sphere `z_bar`.
 *
 * # Safety
 * `z_bar`, `v` and `out_v` must hold `dim` doubles.
 */
enum SphlatStatus sphlat_tangent_project(const double *z_bar,
                                         const double *v,
                                         size_t dim,
                                         double radius,
                                         double *out_v);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string.
 */
enum SphlatStatus sphlat_checkpoint_read(const char *path, struct SphlatCheckpoint **out_handle);

/**
 * # Safety
 * `bytes` must point to `len` readable bytes.
 */
enum SphlatStatus sphlat_checkpoint_from_bytes(const uint8_t *bytes,
                                               size_t len,
                                               struct SphlatCheckpoint **out_handle);

/**
 * # Safety
 * `ck` must come from a checkpoint constructor and not be used afterwards.
 */
void sphlat_checkpoint_free(struct SphlatCheckpoint *ck);

/**
 * # Safety
 * `ck` must be live.
 */
enum SphlatStatus sphlat_checkpoint_len(const struct SphlatCheckpoint *ck, size_t *out_len);

/**
 * Copy tensor `name` into `out_data`. `out_len` receives the element count
 * even when the buffer is too small.
 *
 * # Safety
 * `name` must be NUL-terminated; `out_data` must hold `cap` doubles.
 */
enum SphlatStatus sphlat_checkpoint_tensor(const struct SphlatCheckpoint *ck,
                                           const char *name,
                                           double *out_data,
                                           size_t cap,
                                           size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHLAT_H */
