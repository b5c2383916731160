/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SHAPE2ANIMAL_H
#define SHAPE2ANIMAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum S2aStatus {
  S2A_STATUS_OK = 0,
  S2A_STATUS_NULL_ARGUMENT = 1,
  S2A_STATUS_INVALID_ARGUMENT = 2,
  S2A_STATUS_SHAPE = 3,
  S2A_STATUS_DEGENERATE = 4,
  S2A_STATUS_CONFIG = 5,
  S2A_STATUS_NUMERIC = 6,
  S2A_STATUS_PRECONDITION = 7,
  S2A_STATUS_NO_DETECTION = 8,
  S2A_STATUS_EMPTY_MASK = 9,
  S2A_STATUS_INCOHERENT_SEGMENTATION = 10,
  S2A_STATUS_PARSE = 11,
  S2A_STATUS_BACKEND = 12,
  S2A_STATUS_VALIDATION = 13,
  S2A_STATUS_IO = 14,
  S2A_STATUS_PANIC = 15,
} S2aStatus;

// Single-channel depth map normalized to [0, 1].
typedef struct S2aDepthMap S2aDepthMap;

// Single-channel mask, values in [0, 1].
typedef struct S2aMask S2aMask;

typedef struct S2aPipeline S2aPipeline;

// RGB image, channels interleaved, values in [0, 1].
typedef struct S2aRaster S2aRaster;

// Axis-aligned box with exclusive upper corner.
typedef struct S2aBox {
  uint32_t x0;
  uint32_t y0;
  uint32_t x1;
  uint32_t y1;
  float score;
} S2aBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *s2a_last_error_message(void);

// Library version as a static string.
const char *s2a_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void s2a_string_free(char *s);

// Creates a raster from `width * height * 3` interleaved RGB values.
//
// # Safety
// `data` must point to `len` readable floats; `out` must be writable.
enum S2aStatus s2a_raster_new(uint32_t width,
                              uint32_t height,
                              const float *data,
                              size_t len,
                              struct S2aRaster **out);

// Decodes an image file (PNG or JPEG).
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum S2aStatus s2a_raster_load(const char *path, struct S2aRaster **out);

// # Safety
// `raster` must be a live handle; `path` a nul-terminated string.
enum S2aStatus s2a_raster_save_png(const struct S2aRaster *raster, const char *path);

// Width in pixels; 0 for a null handle.
//
// # Safety
// `raster` must be null or a live handle.
uint32_t s2a_raster_width(const struct S2aRaster *raster);

// Height in pixels; 0 for a null handle.
//
// # Safety
// `raster` must be null or a live handle.
uint32_t s2a_raster_height(const struct S2aRaster *raster);

// Copies the pixel values; `len` must equal `width * height * 3`.
//
// # Safety
// `raster` must be a live handle; `buffer` must hold `len` floats.
enum S2aStatus s2a_raster_copy_data(const struct S2aRaster *raster, float *buffer, size_t len);

// # Safety
// `raster` must be null or a handle not yet freed.
void s2a_raster_free(struct S2aRaster *raster);

// Creates a mask from `width * height` values in [0, 1].
//
// # Safety
// `data` must point to `len` readable floats; `out` must be writable.
enum S2aStatus s2a_mask_new(uint32_t width,
                            uint32_t height,
                            const float *data,
                            size_t len,
                            struct S2aMask **out);

// Loads a grayscale mask image.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum S2aStatus s2a_mask_load(const char *path, struct S2aMask **out);

// # Safety
// `mask` must be a live handle; `path` a nul-terminated string.
enum S2aStatus s2a_mask_save_png(const struct S2aMask *mask, const char *path);

// # Safety
// `mask` must be null or a live handle.
uint32_t s2a_mask_width(const struct S2aMask *mask);

// # Safety
// `mask` must be null or a live handle.
uint32_t s2a_mask_height(const struct S2aMask *mask);

// Copies the mask values; `len` must equal `width * height`.
//
// # Safety
// `mask` must be a live handle; `buffer` must hold `len` floats.
enum S2aStatus s2a_mask_copy_data(const struct S2aMask *mask, float *buffer, size_t len);

// Thresholds a mask: a pixel is foreground iff its value is at least
// `threshold`, which must lie in (0, 1].
//
// # Safety
// `mask` must be a live handle; `out` must be writable.
enum S2aStatus s2a_mask_binarize(const struct S2aMask *mask, float threshold, struct S2aMask **out);

// # Safety
// `mask` must be null or a handle not yet freed.
void s2a_mask_free(struct S2aMask *mask);

// Maps raw depth values affinely onto [0, 1]; a constant input becomes 0.5.
//
// # Safety
// `raw` must point to `len` readable floats; `out` must be writable.
enum S2aStatus s2a_depth_normalize(const float *raw,
                                   size_t len,
                                   uint32_t width,
                                   uint32_t height,
                                   struct S2aDepthMap **out);

// # Safety
// `depth` must be a live handle; `buffer` must hold `len` floats.
enum S2aStatus s2a_depth_copy_data(const struct S2aDepthMap *depth, float *buffer, size_t len);

// # Safety
// `depth` must be a live handle; `path` a nul-terminated string.
enum S2aStatus s2a_depth_save_png(const struct S2aDepthMap *depth, const char *path);

// # Safety
// `depth` must be null or a handle not yet freed.
void s2a_depth_free(struct S2aDepthMap *depth);

// `opacity * mask * gen + (1 - opacity) * mask * orig + (1 - mask) * orig`.
//
// # Safety
// All handles must be live; `out` must be writable.
enum S2aStatus s2a_blend_composite(const struct S2aRaster *gen,
                                   const struct S2aRaster *orig,
                                   const struct S2aMask *mask,
                                   double opacity,
                                   struct S2aRaster **out);

// Intersection over union of two binary masks of equal size.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum S2aStatus s2a_iou(const struct S2aMask *a, const struct S2aMask *b, double *out);

// Bilinear resize to a `side x side` square.
//
// # Safety
// `image` must be a live handle; `out` must be writable.
enum S2aStatus s2a_resize_to_working(const struct S2aRaster *image,
                                     uint32_t side,
                                     struct S2aRaster **out);

// Index of the best detection: highest score, then largest area, then
// top-left-most corner.
//
// # Safety
// `boxes` must point to `count` readable boxes; `out_index` must be writable.
enum S2aStatus s2a_select_best(const struct S2aBox *boxes, size_t count, size_t *out_index);

// Parses an interpreter reply into a label and a rendering prompt.
//
// # Safety
// `raw` must be a nul-terminated string; both outputs must be writable.
// Returned strings are released with `s2a_string_free`.
enum S2aStatus s2a_parse_concept(const char *raw, char **label_out, char **prompt_out);

// Builds a pipeline from TOML configuration text (null for defaults),
// resolving backends from the built-in registry.
//
// # Safety
// `config_toml` must be null or a nul-terminated string; `out` writable.
enum S2aStatus s2a_pipeline_new(const char *config_toml, struct S2aPipeline **out);

// The pipeline's run seed.
//
// # Safety
// `pipeline` must be null or a live handle.
uint64_t s2a_pipeline_seed(const struct S2aPipeline *pipeline);

// Runs every stage for the image at `image_path` and returns the run record
// as JSON. Stage failures are reported inside the record, not as a status.
//
// # Safety
// `pipeline` must be a live handle; `image_path` a nul-terminated string;
// `record_json_out` writable.
enum S2aStatus s2a_pipeline_run(const struct S2aPipeline *pipeline,
                                const char *image_path,
                                bool force,
                                char **record_json_out);

// # Safety
// `pipeline` must be null or a handle not yet freed.
void s2a_pipeline_free(struct S2aPipeline *pipeline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPE2ANIMAL_H */
