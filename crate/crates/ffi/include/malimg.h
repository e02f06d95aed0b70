#ifndef MALIMG_H
#define MALIMG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MalimgStatus {
  MALIMG_STATUS_OK = 0,
  MALIMG_STATUS_NULL_POINTER = 1,
  MALIMG_STATUS_INVALID_ARGUMENT = 2,
  MALIMG_STATUS_IO = 3,
  MALIMG_STATUS_FORMAT = 4,
  MALIMG_STATUS_SHAPE = 5,
  MALIMG_STATUS_NON_FINITE = 6,
  MALIMG_STATUS_INTERNAL = 7,
} MalimgStatus;

// A converted image (channels x height x width, values in [0, 1]).
typedef struct MalimgImage MalimgImage;

// A classifier loaded from a checkpoint.
typedef struct MalimgModel MalimgModel;

// Schedule-free AdamW state over a flat parameter vector.
typedef struct MalimgScheduleFree MalimgScheduleFree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *malimg_last_error(void);

// Library version as a static NUL-terminated string.
const char *malimg_version(void);

// Converts `len` bytes to a `channels x size x size` image with the default
// width table. `channels` is 1 (grayscale) or 3 (DEX section coloring).
//
// # Safety
// `bytes` must point to `len` readable bytes and `out` to writable storage
// for one pointer.
enum MalimgStatus malimg_convert(const uint8_t *bytes,
                                 uintptr_t len,
                                 uintptr_t channels,
                                 uintptr_t size,
                                 struct MalimgImage **out);

// Writes the image's channel, height and width.
//
// # Safety
// `img` must be a live handle; the out pointers must be writable.
enum MalimgStatus malimg_image_dims(const struct MalimgImage *img,
                                    uintptr_t *channels,
                                    uintptr_t *height,
                                    uintptr_t *width);

// Copies the planar pixel values into `out`, which must hold exactly
// `channels * height * width` doubles.
//
// # Safety
// `img` must be a live handle and `out` must point to `len` writable doubles.
enum MalimgStatus malimg_image_data(const struct MalimgImage *img, double *out, uintptr_t len);

// Writes the image as an 8-bit PNG.
//
// # Safety
// `img` must be a live handle and `path` a NUL-terminated UTF-8 string.
enum MalimgStatus malimg_image_write_png(const struct MalimgImage *img, const char *path);

// # Safety
// `img` must be NULL or a handle not yet freed.
void malimg_image_free(struct MalimgImage *img);

// Loads model parameters from a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum MalimgStatus malimg_model_load(const char *path, struct MalimgModel **out);

// Writes the model's class count and expected input channel count.
//
// # Safety
// `model` must be a live handle; the out pointers must be writable.
enum MalimgStatus malimg_model_info(const struct MalimgModel *model,
                                    uintptr_t *num_classes,
                                    uintptr_t *in_channels);

// Class probabilities for a `(batch, channels, height, width)` input.
// `probs` must hold exactly `batch * num_classes` doubles.
//
// # Safety
// `model` must be a live handle, `images` must point to
// `batch * channels * height * width` doubles and `probs` to `probs_len`
// writable doubles.
enum MalimgStatus malimg_model_predict(const struct MalimgModel *model,
                                       const double *images,
                                       uintptr_t batch,
                                       uintptr_t channels,
                                       uintptr_t height,
                                       uintptr_t width,
                                       double *probs,
                                       uintptr_t probs_len);

// # Safety
// `model` must be NULL or a handle not yet freed.
void malimg_model_free(struct MalimgModel *model);

// Starts schedule-free AdamW at `theta0` (length `n`).
//
// # Safety
// `theta0` must point to `n` doubles and `out` must be writable.
enum MalimgStatus malimg_sf_new(double lr,
                                double weight_decay,
                                uint64_t warmup_steps,
                                double beta1,
                                double beta2,
                                double eps,
                                const double *theta0,
                                uintptr_t n,
                                struct MalimgScheduleFree **out);

// Writes the point where the next gradient should be evaluated.
//
// # Safety
// `opt` must be a live handle and `out` must point to `n` writable doubles.
enum MalimgStatus malimg_sf_eval_point(const struct MalimgScheduleFree *opt,
                                       double *out,
                                       uintptr_t n);

// Applies one step with gradient `grad` taken at the evaluation point. The
// state is unchanged on failure.
//
// # Safety
// `opt` must be a live handle not used concurrently and `grad` must point
// to `n` doubles.
enum MalimgStatus malimg_sf_step(struct MalimgScheduleFree *opt, const double *grad, uintptr_t n);

// Writes the averaged parameters used for evaluation.
//
// # Safety
// `opt` must be a live handle and `out` must point to `n` writable doubles.
enum MalimgStatus malimg_sf_params(const struct MalimgScheduleFree *opt, double *out, uintptr_t n);

// # Safety
// `opt` must be NULL or a handle not yet freed.
void malimg_sf_free(struct MalimgScheduleFree *opt);

// Macro precision, recall and F1 of `n` predictions over `classes` classes,
// written to `out[0..3]`.
//
// # Safety
// `preds` and `truths` must point to `n` values; `out` to 3 writable doubles.
enum MalimgStatus malimg_macro_prf(const uint32_t *preds,
                                   const uint32_t *truths,
                                   uintptr_t n,
                                   uintptr_t classes,
                                   double *out);

// One-vs-rest macro AUC from an `n x classes` row-major score matrix. Classes
// without both positives and negatives are left out of the mean.
//
// # Safety
// `scores` must point to `n * classes` doubles, `truths` to `n` values and
// `out` to one writable double.
enum MalimgStatus malimg_macro_auc(const double *scores,
                                   const uint32_t *truths,
                                   uintptr_t n,
                                   uintptr_t classes,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MALIMG_H */
