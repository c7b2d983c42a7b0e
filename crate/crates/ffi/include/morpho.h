#ifndef MORPHO_H
#define MORPHO_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible FFI call.
 */
typedef enum {
  MorphoStatus_Ok = 0,
  MorphoStatus_IoError = 1,
  MorphoStatus_ParseError = 2,
  MorphoStatus_DimensionMismatch = 3,
  MorphoStatus_InvalidArgument = 4,
  MorphoStatus_NullArgument = 5,
  MorphoStatus_Utf8Error = 6,
  MorphoStatus_InternalPanic = 7,
} MorphoStatus;

/**
 * Opaque region-labelled triangle mesh.
 */
typedef struct MorphoMesh MorphoMesh;

/**
 * Opaque fitted discriminant model (loaded from model JSON).
 */
typedef struct MorphoModel MorphoModel;

/**
 * Clinical-style measurements of one mesh.
 */
typedef struct {
  double lv_edv_ml;
  double rv_edv_ml;
  double lv_mass_g;
} MorphoMeasurements;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *morpho_version(void);

/**
 * Copy the last error message into `buf` (truncated to `len - 1` bytes,
 * always NUL-terminated when `len > 0`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
uintptr_t morpho_last_error_message(char *buf, uintptr_t len);

/**
 * Load an OFF mesh, optionally attaching a sidecar region map
 * (`region_map_path` may be null).
 *
 * # Safety
 * `off_path` (and `region_map_path` when non-null) must be NUL-terminated
 * strings; `out` must be a valid pointer.
 */
MorphoStatus morpho_mesh_load(const char *off_path, const char *region_map_path, MorphoMesh **out);

/**
 * Write a mesh as ASCII OFF.
 *
 * # Safety
 * `mesh` must be a live handle; `off_path` a NUL-terminated string.
 */
MorphoStatus morpho_mesh_save(const MorphoMesh *mesh, const char *off_path);

/**
 * Release a mesh handle. Null is a no-op.
 *
 * # Safety
 * `mesh` must have been produced by this library and not freed before.
 */
void morpho_mesh_free(MorphoMesh *mesh);

/**
 * Number of vertices, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be a live handle or null.
 */
uintptr_t morpho_mesh_vertex_count(const MorphoMesh *mesh);

/**
 * Number of triangles, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be a live handle or null.
 */
uintptr_t morpho_mesh_face_count(const MorphoMesh *mesh);

/**
 * Ventricular volumes and LV mass of a region-labelled mesh.
 *
 * # Safety
 * `mesh` must be a live handle; `out` a valid pointer.
 */
MorphoStatus morpho_mesh_measure(const MorphoMesh *mesh, MorphoMeasurements *out);

/**
 * Load a fitted discriminant model from its JSON file.
 *
 * # Safety
 * `json_path` must be a NUL-terminated string; `out` a valid pointer.
 */
MorphoStatus morpho_model_load(const char *json_path, MorphoModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `model` must have been produced by this library and not freed before.
 */
void morpho_model_free(MorphoModel *model);

/**
 * Length of the model's shape space (3N), or 0 for a null handle.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
uintptr_t morpho_model_pattern_len(const MorphoModel *model);

/**
 * Copy the standardized unit pattern into `buf` (length `len` must equal
 * `morpho_model_pattern_len`).
 *
 * # Safety
 * `model` must be a live handle; `buf` must point to `len` doubles.
 */
MorphoStatus morpho_model_pattern(const MorphoModel *model, double *buf, uintptr_t len);

/**
 * Remodelling score of a mesh under the model. When `align` is true the
 * mesh is first rigidly registered to the model mean shape.
 *
 * # Safety
 * `model` and `mesh` must be live handles; `out_score` a valid pointer.
 */
MorphoStatus morpho_model_score(const MorphoModel *model,
                                const MorphoMesh *mesh,
                                bool align,
                                double *out_score);

/**
 * Representative mesh of the pattern at `lambda_sd` standard deviations
 * (clamped to three). The returned handle must be freed by the caller.
 *
 * # Safety
 * `model` must be a live handle; `out` a valid pointer.
 */
MorphoStatus morpho_model_representative(const MorphoModel *model,
                                         double lambda_sd,
                                         MorphoMesh **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MORPHO_H */
