/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LDCT_H
#define LDCT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

enum LdctStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  LDCT_STATUS_OK = 0,
  LDCT_STATUS_NULL_POINTER = 1,
  LDCT_STATUS_INVALID_ARGUMENT = 2,
  LDCT_STATUS_SHAPE_MISMATCH = 3,
  LDCT_STATUS_IO = 4,
  LDCT_STATUS_FORMAT = 5,
  LDCT_STATUS_NON_FINITE = 6,
  LDCT_STATUS_PANIC = 7,
};
#ifndef __cplusplus
typedef int32_t LdctStatus;
#endif // __cplusplus

/**
 * Trained or freshly initialized network.
 */
typedef struct LdctModel LdctModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *ldct_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ldct_version(void);

/**
 * Loads a checkpoint or weights container.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
LdctStatus ldct_model_load(const char *path, struct LdctModel **out);

/**
 * Freshly initialized network. `variant`: 0 = drl, 1 = drl-e.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LdctStatus ldct_model_new(uint32_t variant_code,
                          size_t n_filters,
                          uint64_t seed,
                          struct LdctModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ldct_model_free(struct LdctModel *model);

/**
 * Receptive field of a model's architecture, in pixels.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
LdctStatus ldct_model_receptive_field(const struct LdctModel *model, size_t *out);

/**
 * Denoises one `height x width` image with values normalized to `[0, 1]`
 * (stored pixel / 4095). `output` receives the same number of values.
 * Concurrent calls on one model are allowed.
 *
 * # Safety
 * `input` and `output` must each hold `height * width` floats.
 */
LdctStatus ldct_model_denoise(const struct LdctModel *model,
                              const float *input,
                              size_t height,
                              size_t width,
                              float *output);

/**
 * Simulates a low-dose slice from stored pixels. `angles` projections,
 * `i0` incident photons per bin, attenuation of water `mu_water` (1/mm).
 * Writes stored pixels of the low-dose slice to `output`.
 *
 * # Safety
 * `pixels` and `output` must each hold `height * width` doubles.
 */
LdctStatus ldct_simulate_low_dose(const double *pixels,
                                  size_t height,
                                  size_t width,
                                  double slope,
                                  double intercept,
                                  double voxel_mm,
                                  double i0,
                                  uint64_t seed,
                                  size_t angles,
                                  double mu_water,
                                  double *output);

/**
 * PSNR in dB of two equal-length buffers. For identical inputs `out` is
 * +infinity and `identical` is set to 1.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; `out` and `identical` must be valid.
 */
LdctStatus ldct_psnr(const double *a,
                     const double *b,
                     size_t len,
                     double peak,
                     double *out,
                     bool *identical);

/**
 * Mean SSIM of two `height x width` images with dynamic range 1.
 *
 * # Safety
 * `a` and `b` must hold `height * width` doubles; `out` must be valid.
 */
LdctStatus ldct_ssim(const double *a, const double *b, size_t height, size_t width, double *out);

/**
 * Receptive field of the eight-layer architecture.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LdctStatus ldct_receptive_field(uint32_t variant_code, size_t n_filters, size_t *out);

/**
 * Kernel-weight count `n f^2 c + n^2 f^2 (N - 2) + n f^2 c`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
LdctStatus ldct_count_weights(uint64_t f, uint64_t n, uint64_t c, uint64_t layers, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDCT_H */
