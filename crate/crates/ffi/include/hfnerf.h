#ifndef HFNERF_H
#define HFNERF_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum HfStatus {
  HF_STATUS_OK = 0,
  HF_STATUS_NULL_POINTER = 1,
  HF_STATUS_INVALID_ARGUMENT = 2,
  HF_STATUS_IO = 3,
  HF_STATUS_FORMAT = 4,
  HF_STATUS_DATASET = 5,
  HF_STATUS_CONFIG = 6,
  HF_STATUS_SHAPE_MISMATCH = 7,
  HF_STATUS_NUMERIC = 8,
  HF_STATUS_PANIC = 9,
} HfStatus;

/**
 * A loaded dataset.
 */
typedef struct HfDataset HfDataset;

/**
 * A stack of per-joint heatmaps.
 */
typedef struct HfHeatmaps HfHeatmaps;

/**
 * A trained field plus the run configuration it was trained with.
 */
typedef struct HfModel HfModel;

/**
 * One rendered view: RGB, heatmaps and opacity.
 */
typedef struct HfRender HfRender;

/**
 * One extracted joint. `present` is 0 or 1; absent joints have zero
 * coordinates and confidence.
 */
typedef struct HfJoint {
  double u;
  double v;
  double confidence;
  uint8_t present;
} HfJoint;

/**
 * Mean test-view metrics. `psnr` is `+inf` when every image is exact.
 */
typedef struct HfMetrics {
  double psnr;
  double ssim;
  double mse_color;
  double mse_heat;
  double pck;
} HfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *hf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * Loads a checkpoint. `config_path` may be null, in which case
 * `config.txt` beside the checkpoint is used if present, else defaults.
 *
 * # Safety
 * Paths must be NUL-terminated strings or null; `out` must be writable.
 */
enum HfStatus hf_model_load(const char *ckpt_path, const char *config_path, struct HfModel **out);

/**
 * # Safety
 * `model` must come from [`hf_model_load`] or be null.
 */
void hf_model_free(struct HfModel *model);

/**
 * Number of joint channels the model renders.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum HfStatus hf_model_joints(const struct HfModel *model, size_t *out);

/**
 * Loads a dataset from its directory or manifest path.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_dataset_load(const char *path, struct HfDataset **out);

/**
 * # Safety
 * `dataset` must come from [`hf_dataset_load`] or be null.
 */
void hf_dataset_free(struct HfDataset *dataset);

/**
 * View count and image size of a dataset.
 *
 * # Safety
 * `dataset` must be a live handle; outputs must be writable.
 */
enum HfStatus hf_dataset_info(const struct HfDataset *dataset,
                              size_t *views,
                              size_t *width,
                              size_t *height);

/**
 * Renders dataset view `view` (its manifest index). `n_samples` of 0 uses
 * the model's configured evaluation sample count.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum HfStatus hf_render_view(const struct HfModel *model,
                             const struct HfDataset *dataset,
                             size_t view,
                             size_t n_samples,
                             struct HfRender **out);

/**
 * # Safety
 * `render` must come from [`hf_render_view`] or be null.
 */
void hf_render_free(struct HfRender *render);

/**
 * Width, height and joint count of a render.
 *
 * # Safety
 * `render` must be a live handle; outputs must be writable.
 */
enum HfStatus hf_render_dims(const struct HfRender *render,
                             size_t *width,
                             size_t *height,
                             size_t *joints);

/**
 * Copies the interleaved row-major RGB image; `len` must be `w·h·3`.
 *
 * # Safety
 * `dst` must hold `len` doubles.
 */
enum HfStatus hf_render_copy_rgb(const struct HfRender *render, double *dst, size_t len);

/**
 * Copies the opacity map; `len` must be `w·h`.
 *
 * # Safety
 * `dst` must hold `len` doubles.
 */
enum HfStatus hf_render_copy_opacity(const struct HfRender *render, double *dst, size_t len);

/**
 * Copies the rendered heatmaps out as a new heatmap handle.
 *
 * # Safety
 * `render` must be a live handle; `out` must be writable.
 */
enum HfStatus hf_render_heatmaps(const struct HfRender *render, struct HfHeatmaps **out);

/**
 * Builds a heatmap stack from `k·h·w` values laid out `[k][v][u]`.
 *
 * # Safety
 * `values` must hold `joints·width·height` doubles; `out` must be writable.
 */
enum HfStatus hf_heatmaps_new(size_t joints,
                              size_t width,
                              size_t height,
                              const double *values,
                              struct HfHeatmaps **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HfStatus hf_heatmaps_load(const char *path, struct HfHeatmaps **out);

/**
 * # Safety
 * `heatmaps` must be a live handle; `path` a NUL-terminated string.
 */
enum HfStatus hf_heatmaps_save(const struct HfHeatmaps *heatmaps, const char *path);

/**
 * # Safety
 * `heatmaps` must come from this library or be null.
 */
void hf_heatmaps_free(struct HfHeatmaps *heatmaps);

/**
 * Joint count, width and height of a heatmap stack.
 *
 * # Safety
 * `heatmaps` must be a live handle; outputs must be writable.
 */
enum HfStatus hf_heatmaps_dims(const struct HfHeatmaps *heatmaps,
                               size_t *joints,
                               size_t *width,
                               size_t *height);

/**
 * Extracts one joint per channel into `out[0..len]`; `len` must equal the
 * joint count.
 *
 * # Safety
 * `heatmaps` must be a live handle; `out` must hold `len` joints.
 */
enum HfStatus hf_extract_skeleton(const struct HfHeatmaps *heatmaps,
                                  double sigma_g,
                                  double tau,
                                  struct HfJoint *out,
                                  size_t len);

/**
 * Mean metrics over the dataset's test views.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum HfStatus hf_evaluate(const struct HfModel *model,
                          const struct HfDataset *dataset,
                          struct HfMetrics *out);

/**
 * Mean squared difference of two equal-length arrays.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; `out` must be writable.
 */
enum HfStatus hf_mse(const double *a, const double *b, size_t len, double *out);

/**
 * PSNR in dB of two interleaved RGB images; `+inf` when identical.
 *
 * # Safety
 * `a` and `b` must hold `width·height·3` doubles; `out` must be writable.
 */
enum HfStatus hf_psnr(const double *a,
                      const double *b,
                      size_t width,
                      size_t height,
                      double peak,
                      double *out);

/**
 * Windowed luma SSIM of two interleaved RGB images.
 *
 * # Safety
 * `a` and `b` must hold `width·height·3` doubles; `out` must be writable.
 */
enum HfStatus hf_ssim(const double *a,
                      const double *b,
                      size_t width,
                      size_t height,
                      double peak,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFNERF_H */
