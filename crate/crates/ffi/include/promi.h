#ifndef PROMI_H
#define PROMI_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PromiStatus {
  PROMI_STATUS_OK = 0,
  PROMI_STATUS_NULL_POINTER = 1,
  PROMI_STATUS_INVALID_ARGUMENT = 2,
  PROMI_STATUS_FORMAT = 3,
  PROMI_STATUS_DATA = 4,
  PROMI_STATUS_SHAPE = 5,
  PROMI_STATUS_IO = 6,
  PROMI_STATUS_ANNOTATION = 7,
  PROMI_STATUS_DEGENERATE_SUPPORT = 8,
  PROMI_STATUS_MANIFEST = 9,
  PROMI_STATUS_CONFIG = 10,
  PROMI_STATUS_PANIC = 11,
} PromiStatus;

typedef enum PromiStopReason {
  PROMI_STOP_REASON_NOT_ITERATED = 0,
  PROMI_STOP_REASON_NO_FALSE_POSITIVES = 1,
  PROMI_STOP_REASON_FIXED_POINT = 2,
  PROMI_STOP_REASON_MAX_ITERATIONS = 3,
} PromiStopReason;

typedef struct PromiFeatureMap PromiFeatureMap;

typedef struct PromiMask PromiMask;

typedef struct PromiPrototypeSet PromiPrototypeSet;

typedef struct PromiFitConfig {
  size_t k_max;
  bool bg_mixture_enabled;
  bool fg_refinement_enabled;
  size_t max_iterations;
} PromiFitConfig;

/**
 * Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
 */
typedef struct PromiBox {
  size_t x_min;
  size_t y_min;
  size_t x_max;
  size_t y_max;
} PromiBox;

typedef struct PromiDiagnostics {
  size_t iterations_run;
  size_t spawn_events;
  size_t empty_cluster_events;
  enum PromiStopReason stop_reason;
} PromiDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *promi_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *promi_version(void);

/**
 * Copies a row-major `grid_h × grid_w × depth` array into a new feature map.
 *
 * # Safety
 * `data` must point to `grid_h * grid_w * depth` floats; `out` must be
 * writable.
 */
enum PromiStatus promi_feature_map_new(const float *data,
                                       size_t grid_h,
                                       size_t grid_w,
                                       size_t depth,
                                       size_t image_h,
                                       size_t image_w,
                                       struct PromiFeatureMap **out);

/**
 * Loads an NPY feature file and its `<name>.json` geometry sidecar.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum PromiStatus promi_feature_map_load(const char *path, struct PromiFeatureMap **out);

/**
 * Loads an NPY feature file with explicit image dimensions.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum PromiStatus promi_feature_map_load_with_geometry(const char *path,
                                                      size_t image_h,
                                                      size_t image_w,
                                                      struct PromiFeatureMap **out);

/**
 * Writes `[grid_h, grid_w, depth, image_h, image_w]` into `dims`.
 *
 * # Safety
 * `map` must be a live handle; `dims` must hold 5 values.
 */
enum PromiStatus promi_feature_map_dims(const struct PromiFeatureMap *map, size_t *dims);

/**
 * # Safety
 * `map` must be null or a handle not freed before.
 */
void promi_feature_map_free(struct PromiFeatureMap *map);

/**
 * Default configuration: `k_max = 2`, both refinements on, 100 iterations.
 */
struct PromiFitConfig promi_fit_config_default(void);

/**
 * Fits prototypes on `n_support` feature maps. Image `i` has
 * `box_counts[i]` boxes starting at `boxes[i]` (which may be null when the
 * count is zero). A null `config` means the default.
 *
 * # Safety
 * All arrays must hold `n_support` entries and every handle must be live.
 */
enum PromiStatus promi_fit(const struct PromiFeatureMap *const *maps,
                           const struct PromiBox *const *boxes,
                           const size_t *box_counts,
                           size_t n_support,
                           const struct PromiFitConfig *config,
                           struct PromiPrototypeSet **out);

/**
 * # Safety
 * `set` must be a live handle.
 */
size_t promi_prototypes_num_background(const struct PromiPrototypeSet *set);

/**
 * # Safety
 * `set` must be a live handle.
 */
size_t promi_prototypes_depth(const struct PromiPrototypeSet *set);

/**
 * # Safety
 * `set` must be a live handle; `out` must be writable.
 */
enum PromiStatus promi_prototypes_diagnostics(const struct PromiPrototypeSet *set,
                                              struct PromiDiagnostics *out);

/**
 * Copies the `(K + 1) × depth` prototype matrix (foreground row first)
 * into `out`, which must hold `len` doubles.
 *
 * # Safety
 * `set` must be a live handle; `out` must hold `len` doubles.
 */
enum PromiStatus promi_prototypes_copy(const struct PromiPrototypeSet *set,
                                       double *out,
                                       size_t len);

/**
 * # Safety
 * `set` must be a live handle; `path` a nul-terminated string.
 */
enum PromiStatus promi_prototypes_save(const struct PromiPrototypeSet *set, const char *path);

/**
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum PromiStatus promi_prototypes_load(const char *path, struct PromiPrototypeSet **out);

/**
 * # Safety
 * `set` must be null or a handle not freed before.
 */
void promi_prototypes_free(struct PromiPrototypeSet *set);

/**
 * Segments a query feature map at its image resolution.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PromiStatus promi_predict(const struct PromiFeatureMap *query,
                               const struct PromiPrototypeSet *set,
                               struct PromiMask **out);

/**
 * # Safety
 * `mask` must be a live handle.
 */
size_t promi_mask_height(const struct PromiMask *mask);

/**
 * # Safety
 * `mask` must be a live handle.
 */
size_t promi_mask_width(const struct PromiMask *mask);

/**
 * Row-major `height × width` bytes, each 0 or 1, owned by the mask.
 *
 * # Safety
 * `mask` must be a live handle; the pointer dies with it.
 */
const uint8_t *promi_mask_data(const struct PromiMask *mask);

/**
 * Writes an 8-bit grayscale PNG (0 or 255).
 *
 * # Safety
 * `mask` must be a live handle; `path` a nul-terminated string.
 */
enum PromiStatus promi_mask_save_png(const struct PromiMask *mask, const char *path);

/**
 * # Safety
 * `mask` must be null or a handle not freed before.
 */
void promi_mask_free(struct PromiMask *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMI_H */
