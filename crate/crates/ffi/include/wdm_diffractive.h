#ifndef WDM_DIFFRACTIVE_H
#define WDM_DIFFRACTIVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum WdmStatus {
  WDM_STATUS_OK = 0,
  WDM_STATUS_NULL_POINTER = 1,
  WDM_STATUS_INVALID_ARGUMENT = 2,
  WDM_STATUS_CONFIG = 3,
  WDM_STATUS_NUMERICAL = 4,
  WDM_STATUS_IO = 5,
  WDM_STATUS_FORMAT = 6,
  WDM_STATUS_GEOMETRY_MISMATCH = 7,
  WDM_STATUS_PANIC = 8,
} WdmStatus;

// Opaque model handle.
typedef struct WdmModel WdmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length
// including the terminator, so a too-small buffer can be retried.
size_t wdm_last_error_message(char *buf, size_t len);

// Creates a randomly initialized stack of the dispersion-free material.
// `wavelengths` may be null to use the default ladder of `n_channels`
// wavelengths in units of λ_m.
enum WdmStatus wdm_model_new(size_t layers,
                             size_t layer_side,
                             size_t fov_side,
                             size_t n_channels,
                             const double *wavelengths,
                             uint64_t seed,
                             struct WdmModel **out);

enum WdmStatus wdm_model_load(const char *path_utf8, struct WdmModel **out);

enum WdmStatus wdm_model_save(const struct WdmModel *model, const char *path_utf8);

// Releases a handle; null is ignored.
void wdm_model_free(struct WdmModel *model);

size_t wdm_model_n_channels(const struct WdmModel *model);

// Pixels per FOV (`N_i = N_o`).
size_t wdm_model_fov_pixels(const struct WdmModel *model);

// `q = 0` selects continuous thickness, otherwise `1 ≤ q ≤ 32` bits.
enum WdmStatus wdm_model_set_bit_depth(struct WdmModel *model, uint32_t q);

// Runs channel `channel` on `input` (`2·N_i` doubles), writing `2·N_o`
// doubles to `output`.
enum WdmStatus wdm_model_forward(const struct WdmModel *model,
                                 size_t channel,
                                 const double *input,
                                 double *output);

// Writes the realized `N_o × N_i` transform of `channel` to `out`
// (`2·N_o·N_i` doubles, column-major).
enum WdmStatus wdm_model_extract_transform(const struct WdmModel *model,
                                           size_t channel,
                                           double *out);

// Scale-matched normalized transformation error between target `a` and
// realized `b`, both `rows × cols` column-major.
enum WdmStatus wdm_mse_transformation(const double *a,
                                      const double *b,
                                      size_t rows,
                                      size_t cols,
                                      double *out);

enum WdmStatus wdm_cosine_similarity(const double *a,
                                     const double *b,
                                     size_t rows,
                                     size_t cols,
                                     double *out);

// Normalized output error between `target` and `output`, each a square
// FOV of `n` pixels.
enum WdmStatus wdm_channel_loss(const double *target, const double *output, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WDM_DIFFRACTIVE_H */
