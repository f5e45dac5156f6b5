#ifndef JSCC_H
#define JSCC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum JsccStatus {
  JSCC_STATUS_OK = 0,
  JSCC_STATUS_NULL_POINTER = 1,
  JSCC_STATUS_INVALID_ARGUMENT = 2,
  JSCC_STATUS_SHAPE_MISMATCH = 3,
  JSCC_STATUS_IO = 4,
  JSCC_STATUS_CHECKPOINT = 5,
  JSCC_STATUS_NUMERIC = 6,
  JSCC_STATUS_PANIC = 7,
} JsccStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct JsccModel JsccModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. Valid until the next call into this library on the
 * same thread.
 */
const char *jscc_last_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *jscc_version(void);

/**
 * Loads a checkpoint written by `jscc train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer. On
 * success `*out` owns a model that must be released with [`jscc_model_free`].
 */
enum JsccStatus jscc_model_load(const char *path, struct JsccModel **out);

/**
 * # Safety
 * `model` must be null or a pointer from [`jscc_model_load`] not yet freed.
 */
void jscc_model_free(struct JsccModel *model);

/**
 * Image dimensions the model was trained on.
 *
 * # Safety
 * All pointers must be valid.
 */
enum JsccStatus jscc_model_image_shape(const struct JsccModel *model,
                                       size_t *height,
                                       size_t *width,
                                       size_t *channels);

/**
 * Complex time samples in one transmitted packet.
 *
 * # Safety
 * All pointers must be valid.
 */
enum JsccStatus jscc_model_packet_len(const struct JsccModel *model, size_t *len);

/**
 * Sends one image through a multipath channel and reconstructs it.
 *
 * The channel is drawn from stream `index` of `seed`, so the call matches
 * the first realization `jscc eval` uses for test image `index`. Pass
 * `INFINITY` as `clip_ratio` to disable clipping. `tx` may be null;
 * otherwise it receives `2 * packet_len` interleaved doubles.
 *
 * # Safety
 * `pixels` and `recon` must hold `pixels_len` doubles; `tx`, when not
 * null, must hold `tx_len` doubles.
 */
enum JsccStatus jscc_model_transmit(const struct JsccModel *model,
                                    const double *pixels,
                                    size_t pixels_len,
                                    double snr_db,
                                    double clip_ratio,
                                    size_t taps,
                                    uint64_t seed,
                                    size_t index,
                                    double *recon,
                                    double *tx,
                                    size_t tx_len);

/**
 * Channel uses per pixel.
 *
 * # Safety
 * `cpp` must be valid.
 */
enum JsccStatus jscc_cpp(size_t fft_size,
                         size_t cp_len,
                         size_t pilot_symbols,
                         size_t data_symbols,
                         size_t height,
                         size_t width,
                         size_t channels,
                         double *cpp);

/**
 * PSNR in dB between two `H×W×C` images.
 *
 * # Safety
 * `a` and `b` must hold `height * width * channels` doubles; `psnr` must be valid.
 */
enum JsccStatus jscc_psnr(const double *a,
                          const double *b,
                          size_t height,
                          size_t width,
                          size_t channels,
                          double max_val,
                          double *psnr);

/**
 * Mean SSIM between two `H×W×C` images.
 *
 * # Safety
 * `a` and `b` must hold `height * width * channels` doubles; `ssim` must be valid.
 */
enum JsccStatus jscc_ssim(const double *a,
                          const double *b,
                          size_t height,
                          size_t width,
                          size_t channels,
                          double *ssim);

/**
 * PAPR in dB of `iq_len / 2` complex samples.
 *
 * # Safety
 * `iq` must hold `iq_len` doubles; `papr_db` must be valid.
 */
enum JsccStatus jscc_papr_db(const double *iq, size_t iq_len, double *papr_db);

/**
 * Clips samples in place to amplitude `clip_ratio * sqrt(signal_power)`.
 *
 * # Safety
 * `iq` must hold `iq_len` doubles.
 */
enum JsccStatus jscc_clip(double *iq, size_t iq_len, double clip_ratio, double signal_power);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JSCC_H */
