//! C ABI over the core shape-analysis toolkit.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns a [`MorphoStatus`];
//! on failure a thread-local message is retrievable via
//! [`morpho_last_error_message`]. All functions are panic-safe.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use morpho_core::align::rigid_align;
use morpho_core::discriminant::{representative_shape, score, DiscriminantModelFile};
use morpho_core::mesh::{self, ShapeVector, TriMesh};
use morpho_core::MorphoError;

/// Status codes returned by every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphoStatus {
    Ok = 0,
    IoError = 1,
    ParseError = 2,
    DimensionMismatch = 3,
    InvalidArgument = 4,
    NullArgument = 5,
    Utf8Error = 6,
    InternalPanic = 7,
}

/// Clinical-style measurements of one mesh.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MorphoMeasurements {
    pub lv_edv_ml: f64,
    pub rv_edv_ml: f64,
    pub lv_mass_g: f64,
}

/// Opaque region-labelled triangle mesh.
pub struct MorphoMesh(TriMesh);

/// Opaque fitted discriminant model (loaded from model JSON).
pub struct MorphoModel(DiscriminantModelFile);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &MorphoError) -> MorphoStatus {
    match err {
        MorphoError::Io { .. } => MorphoStatus::IoError,
        MorphoError::Parse { .. } => MorphoStatus::ParseError,
        MorphoError::DimensionMismatch(_) => MorphoStatus::DimensionMismatch,
        _ => MorphoStatus::InvalidArgument,
    }
}

fn fail(err: &MorphoError) -> MorphoStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> MorphoStatus>(f: F) -> MorphoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MorphoStatus::InternalPanic
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, MorphoStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(MorphoStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(MorphoStatus::Utf8Error)
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn morpho_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message into `buf` (truncated to `len - 1` bytes,
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to at least `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn morpho_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Load an OFF mesh, optionally attaching a sidecar region map
/// (`region_map_path` may be null).
///
/// # Safety
/// `off_path` (and `region_map_path` when non-null) must be NUL-terminated
/// strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_load(
    off_path: *const c_char,
    region_map_path: *const c_char,
    out: *mut *mut MorphoMesh,
) -> MorphoStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return MorphoStatus::NullArgument;
        }
        let path = match path_arg(off_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mut loaded = match mesh::read_off(path) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        if !region_map_path.is_null() {
            let rpath = match path_arg(region_map_path) {
                Ok(p) => p,
                Err(s) => return s,
            };
            match mesh::read_region_map(rpath, loaded.n_vertices()) {
                Ok(labels) => loaded.region_map = labels,
                Err(e) => return fail(&e),
            }
        }
        *out = Box::into_raw(Box::new(MorphoMesh(loaded)));
        MorphoStatus::Ok
    })
}

/// Write a mesh as ASCII OFF.
///
/// # Safety
/// `mesh` must be a live handle; `off_path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_save(
    mesh: *const MorphoMesh,
    off_path: *const c_char,
) -> MorphoStatus {
    guard(|| {
        if mesh.is_null() {
            set_error("null mesh handle");
            return MorphoStatus::NullArgument;
        }
        let path = match path_arg(off_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match mesh::write_off(&(*mesh).0, path) {
            Ok(()) => MorphoStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Release a mesh handle. Null is a no-op.
///
/// # Safety
/// `mesh` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_free(mesh: *mut MorphoMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Number of vertices, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_vertex_count(mesh: *const MorphoMesh) -> usize {
    if mesh.is_null() {
        0
    } else {
        (*mesh).0.n_vertices()
    }
}

/// Number of triangles, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_face_count(mesh: *const MorphoMesh) -> usize {
    if mesh.is_null() {
        0
    } else {
        (*mesh).0.n_faces()
    }
}

/// Ventricular volumes and LV mass of a region-labelled mesh.
///
/// # Safety
/// `mesh` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn morpho_mesh_measure(
    mesh: *const MorphoMesh,
    out: *mut MorphoMeasurements,
) -> MorphoStatus {
    guard(|| {
        if mesh.is_null() || out.is_null() {
            set_error("null argument");
            return MorphoStatus::NullArgument;
        }
        match mesh::measure(&(*mesh).0) {
            Ok(m) => {
                *out = MorphoMeasurements {
                    lv_edv_ml: m.lv_edv,
                    rv_edv_ml: m.rv_edv,
                    lv_mass_g: m.lv_mass,
                };
                MorphoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a fitted discriminant model from its JSON file.
///
/// # Safety
/// `json_path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_load(
    json_path: *const c_char,
    out: *mut *mut MorphoModel,
) -> MorphoStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output argument");
            return MorphoStatus::NullArgument;
        }
        let path = match path_arg(json_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match DiscriminantModelFile::load(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MorphoModel(m)));
                MorphoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_free(model: *mut MorphoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the model's shape space (3N), or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_pattern_len(model: *const MorphoModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).0.standardized.len()
    }
}

/// Copy the standardized unit pattern into `buf` (length `len` must equal
/// `morpho_model_pattern_len`).
///
/// # Safety
/// `model` must be a live handle; `buf` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_pattern(
    model: *const MorphoModel,
    buf: *mut f64,
    len: usize,
) -> MorphoStatus {
    guard(|| {
        if model.is_null() || buf.is_null() {
            set_error("null argument");
            return MorphoStatus::NullArgument;
        }
        let pattern = &(*model).0.standardized;
        if len != pattern.len() {
            set_error(&format!(
                "buffer has {len} entries, pattern needs {}",
                pattern.len()
            ));
            return MorphoStatus::DimensionMismatch;
        }
        std::ptr::copy_nonoverlapping(pattern.as_slice().as_ptr(), buf, len);
        MorphoStatus::Ok
    })
}

/// Remodelling score of a mesh under the model. When `align` is true the
/// mesh is first rigidly registered to the model mean shape.
///
/// # Safety
/// `model` and `mesh` must be live handles; `out_score` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_score(
    model: *const MorphoModel,
    mesh: *const MorphoMesh,
    align: bool,
    out_score: *mut f64,
) -> MorphoStatus {
    guard(|| {
        if model.is_null() || mesh.is_null() || out_score.is_null() {
            set_error("null argument");
            return MorphoStatus::NullArgument;
        }
        let pattern = (*model).0.pattern();
        let mut shape = mesh::flatten(&(*mesh).0);
        if align {
            match rigid_align(&shape, &pattern.mean_shape) {
                Ok((_, aligned)) => shape = aligned,
                Err(e) => return fail(&e),
            }
        }
        match score(&pattern, &shape) {
            Ok(s) => {
                *out_score = s;
                MorphoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Representative mesh of the pattern at `lambda_sd` standard deviations
/// (clamped to three). The returned handle must be freed by the caller.
///
/// # Safety
/// `model` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn morpho_model_representative(
    model: *const MorphoModel,
    lambda_sd: f64,
    out: *mut *mut MorphoMesh,
) -> MorphoStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            set_error("null argument");
            return MorphoStatus::NullArgument;
        }
        let file = &(*model).0;
        let pattern = file.pattern();
        let shape: ShapeVector = representative_shape(&pattern, lambda_sd * pattern.score_sd);
        match mesh::unflatten(&shape, &file.template) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MorphoMesh(m)));
                MorphoStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use morpho_core::discriminant::{fit_pipeline, DrMethod, PipelineConfig};
    use morpho_core::synth::{
        generate, write_cohort, ClassEffectSpec, ConfounderSpec, DirectionSpec, SampleDistribution,
        SynthSpec,
    };
    use std::path::PathBuf;

    fn c_path(p: &Path) -> CString {
        CString::new(p.to_str().unwrap()).unwrap()
    }

    fn last_error() -> String {
        let mut buf = vec![0u8; 256];
        let n = unsafe { morpho_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
        String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
    }

    fn fixture() -> (tempfile::TempDir, PathBuf, PathBuf, PathBuf) {
        let spec = SynthSpec {
            n_controls: 12,
            n_cases: 12,
            resolution: 2,
            class_effect: ClassEffectSpec {
                direction: DirectionSpec::Named("athlete_remodel".into()),
                magnitude_mm: 2.0,
            },
            confounders: vec![ConfounderSpec {
                column: "bmi".into(),
                control: SampleDistribution::Normal {
                    mean: 25.0,
                    sd: 3.0,
                },
                case: SampleDistribution::Normal {
                    mean: 25.0,
                    sd: 3.0,
                },
                effect: None,
            }],
            noise_sd: 0.05,
            seed: 5,
        };
        let (cohort, truth) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &cohort, &truth).unwrap();
        let config = PipelineConfig {
            dr_method: DrMethod::Pca,
            pca_modes: 5,
            confounders: vec!["bmi".into()],
            ..PipelineConfig::default()
        };
        let pipe = fit_pipeline(&cohort, &config).unwrap();
        let model = DiscriminantModelFile::from_fit(&pipe, &cohort.template);
        let model_path = dir.path().join("model.json");
        model.save(&model_path).unwrap();
        let mesh_path = dir.path().join("meshes/s0000.off");
        let regions_path = dir.path().join("region_map.txt");
        (dir, model_path, mesh_path, regions_path)
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(morpho_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn mesh_lifecycle_and_measurements() {
        let (_dir, _model, mesh_path, regions_path) = fixture();
        let mut mesh: *mut MorphoMesh = std::ptr::null_mut();
        let status = unsafe {
            morpho_mesh_load(
                c_path(&mesh_path).as_ptr(),
                c_path(&regions_path).as_ptr(),
                &mut mesh,
            )
        };
        assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
        assert!(unsafe { morpho_mesh_vertex_count(mesh) } > 0);
        assert!(unsafe { morpho_mesh_face_count(mesh) } > 0);

        let mut meas = MorphoMeasurements {
            lv_edv_ml: 0.0,
            rv_edv_ml: 0.0,
            lv_mass_g: 0.0,
        };
        let status = unsafe { morpho_mesh_measure(mesh, &mut meas) };
        assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
        assert!(meas.lv_edv_ml > 0.0 && meas.rv_edv_ml > 0.0 && meas.lv_mass_g > 0.0);
        unsafe { morpho_mesh_free(mesh) };
    }

    #[test]
    fn model_scoring_and_representative() {
        let (dir, model_path, mesh_path, regions_path) = fixture();
        let mut model: *mut MorphoModel = std::ptr::null_mut();
        let status = unsafe { morpho_model_load(c_path(&model_path).as_ptr(), &mut model) };
        assert_eq!(status, MorphoStatus::Ok, "{}", last_error());

        let len = unsafe { morpho_model_pattern_len(model) };
        assert!(len > 0 && len % 3 == 0);
        let mut pattern = vec![0.0f64; len];
        let status = unsafe { morpho_model_pattern(model, pattern.as_mut_ptr(), len) };
        assert_eq!(status, MorphoStatus::Ok);
        let norm: f64 = pattern.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "pattern norm {norm}");

        // a control (s0000) scores below a case (s0012)
        let score_of = |name: &str| -> f64 {
            let path = mesh_path.parent().unwrap().join(name);
            let mut mesh: *mut MorphoMesh = std::ptr::null_mut();
            let status = unsafe {
                morpho_mesh_load(
                    c_path(&path).as_ptr(),
                    c_path(&regions_path).as_ptr(),
                    &mut mesh,
                )
            };
            assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
            let mut s = f64::NAN;
            let status = unsafe { morpho_model_score(model, mesh, true, &mut s) };
            assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
            unsafe { morpho_mesh_free(mesh) };
            s
        };
        let control = score_of("s0000.off");
        let case = score_of("s0012.off");
        assert!(
            case > control,
            "case score {case} <= control score {control}"
        );

        // representative mesh round-trips through save
        let mut repr: *mut MorphoMesh = std::ptr::null_mut();
        let status = unsafe { morpho_model_representative(model, 2.0, &mut repr) };
        assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
        let out_path = dir.path().join("repr.off");
        let status = unsafe { morpho_mesh_save(repr, c_path(&out_path).as_ptr()) };
        assert_eq!(status, MorphoStatus::Ok, "{}", last_error());
        assert!(out_path.exists());
        unsafe { morpho_mesh_free(repr) };
        unsafe { morpho_model_free(model) };
    }

    #[test]
    fn missing_file_reports_io_error_with_message() {
        let mut mesh: *mut MorphoMesh = std::ptr::null_mut();
        let path = CString::new("/no/such/file.off").unwrap();
        let status = unsafe { morpho_mesh_load(path.as_ptr(), std::ptr::null(), &mut mesh) };
        assert_eq!(status, MorphoStatus::IoError);
        assert!(last_error().contains("file.off"), "{}", last_error());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let status =
            unsafe { morpho_mesh_load(std::ptr::null(), std::ptr::null(), std::ptr::null_mut()) };
        assert_eq!(status, MorphoStatus::NullArgument);
        unsafe { morpho_mesh_free(std::ptr::null_mut()) }; // no-op, no crash
        unsafe { morpho_model_free(std::ptr::null_mut()) };
        assert_eq!(unsafe { morpho_mesh_vertex_count(std::ptr::null()) }, 0);
    }

    #[test]
    fn pattern_buffer_length_checked() {
        let (_dir, model_path, _mesh, _regions) = fixture();
        let mut model: *mut MorphoModel = std::ptr::null_mut();
        unsafe { morpho_model_load(c_path(&model_path).as_ptr(), &mut model) };
        let mut small = vec![0.0f64; 3];
        let status = unsafe { morpho_model_pattern(model, small.as_mut_ptr(), 3) };
        assert_eq!(status, MorphoStatus::DimensionMismatch);
        unsafe { morpho_model_free(model) };
    }

    #[test]
    fn generated_header_declares_the_surface() {
        let header =
            std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/morpho.h"))
                .expect("cbindgen header exists");
        for symbol in [
            "morpho_version",
            "morpho_last_error_message",
            "morpho_mesh_load",
            "morpho_mesh_measure",
            "morpho_model_load",
            "morpho_model_score",
            "morpho_model_representative",
            "MorphoStatus",
            "MorphoMeasurements",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
