//! C ABI over the `promi` engine.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load`/`promi_fit`/
//! `promi_predict` and released with the matching `*_free`. Fallible calls
//! return a [`PromiStatus`]; on failure a message is stored per thread and
//! can be read with [`promi_last_error_message`]. Panics never cross the
//! boundary: they are caught and reported as `PROMI_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use promi::annotation::{boxes_to_patch_labels, BoundingBox};
use promi::feature_store::{l2_normalize, load_feature_map, load_feature_map_with_geometry, FeatureMap, ImageGeometry};
use promi::inference::predict;
use promi::mask::SegmentationMask;
use promi::prototypes::{fit, load_prototypes, save_prototypes, FitConfig, PrototypeSet, StopReason, SupportBatch};
use promi::PromiError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Data = 4,
    Shape = 5,
    Io = 6,
    Annotation = 7,
    DegenerateSupport = 8,
    Manifest = 9,
    Config = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromiStopReason {
    NotIterated = 0,
    NoFalsePositives = 1,
    FixedPoint = 2,
    MaxIterations = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromiFitConfig {
    pub k_max: usize,
    pub bg_mixture_enabled: bool,
    pub fg_refinement_enabled: bool,
    pub max_iterations: usize,
}

/// Half-open pixel box `[x_min, x_max) × [y_min, y_max)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromiBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromiDiagnostics {
    pub iterations_run: usize,
    pub spawn_events: usize,
    pub empty_cluster_events: usize,
    pub stop_reason: PromiStopReason,
}

pub struct PromiFeatureMap(FeatureMap);
pub struct PromiPrototypeSet(PrototypeSet);
pub struct PromiMask(SegmentationMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PromiStatus, String);

impl From<PromiError> for Failure {
    fn from(e: PromiError) -> Self {
        let status = match &e {
            PromiError::Format(_) => PromiStatus::Format,
            PromiError::Data(_) => PromiStatus::Data,
            PromiError::Shape(_) => PromiStatus::Shape,
            PromiError::Io { .. } => PromiStatus::Io,
            PromiError::Annotation(_) => PromiStatus::Annotation,
            PromiError::DegenerateSupport(_) => PromiStatus::DegenerateSupport,
            PromiError::Manifest(_) => PromiStatus::Manifest,
            PromiError::Config(_) => PromiStatus::Config,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PromiStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PromiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PromiStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PromiStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(PromiStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn clear_out<T>(out: *mut *mut T) {
    if !out.is_null() {
        *out = ptr::null_mut();
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn promi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn promi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies a row-major `grid_h × grid_w × depth` array into a new feature map.
///
/// # Safety
/// `data` must point to `grid_h * grid_w * depth` floats; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn promi_feature_map_new(
    data: *const f32,
    grid_h: usize,
    grid_w: usize,
    depth: usize,
    image_h: usize,
    image_w: usize,
    out: *mut *mut PromiFeatureMap,
) -> PromiStatus {
    clear_out(out);
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = grid_h
            .checked_mul(grid_w)
            .and_then(|n| n.checked_mul(depth))
            .ok_or_else(|| Failure(PromiStatus::InvalidArgument, "dimensions overflow".into()))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let map = FeatureMap::new(grid_h, grid_w, depth, values, ImageGeometry { image_h, image_w })?;
        write_out(out, PromiFeatureMap(map))
    })
}

/// Loads an NPY feature file and its `<name>.json` geometry sidecar.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn promi_feature_map_load(path: *const c_char, out: *mut *mut PromiFeatureMap) -> PromiStatus {
    clear_out(out);
    guard(|| {
        let map = load_feature_map(&path_arg(path)?)?;
        write_out(out, PromiFeatureMap(map))
    })
}

/// Loads an NPY feature file with explicit image dimensions.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn promi_feature_map_load_with_geometry(
    path: *const c_char,
    image_h: usize,
    image_w: usize,
    out: *mut *mut PromiFeatureMap,
) -> PromiStatus {
    clear_out(out);
    guard(|| {
        let map = load_feature_map_with_geometry(&path_arg(path)?, ImageGeometry { image_h, image_w })?;
        write_out(out, PromiFeatureMap(map))
    })
}

/// Writes `[grid_h, grid_w, depth, image_h, image_w]` into `dims`.
///
/// # Safety
/// `map` must be a live handle; `dims` must hold 5 values.
#[no_mangle]
pub unsafe extern "C" fn promi_feature_map_dims(map: *const PromiFeatureMap, dims: *mut usize) -> PromiStatus {
    guard(|| {
        let m = &map.as_ref().ok_or_else(|| null("map"))?.0;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = std::slice::from_raw_parts_mut(dims, 5);
        d.copy_from_slice(&[m.grid_h(), m.grid_w(), m.depth(), m.image_h(), m.image_w()]);
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn promi_feature_map_free(map: *mut PromiFeatureMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Default configuration: `k_max = 2`, both refinements on, 100 iterations.
#[no_mangle]
pub extern "C" fn promi_fit_config_default() -> PromiFitConfig {
    let c = FitConfig::default();
    PromiFitConfig {
        k_max: c.k_max,
        bg_mixture_enabled: c.bg_mixture_enabled,
        fg_refinement_enabled: c.fg_refinement_enabled,
        max_iterations: c.max_iterations,
    }
}

/// Fits prototypes on `n_support` feature maps. Image `i` has
/// `box_counts[i]` boxes starting at `boxes[i]` (which may be null when the
/// count is zero). A null `config` means the default.
///
/// # Safety
/// All arrays must hold `n_support` entries and every handle must be live.
#[no_mangle]
pub unsafe extern "C" fn promi_fit(
    maps: *const *const PromiFeatureMap,
    boxes: *const *const PromiBox,
    box_counts: *const usize,
    n_support: usize,
    config: *const PromiFitConfig,
    out: *mut *mut PromiPrototypeSet,
) -> PromiStatus {
    clear_out(out);
    guard(|| {
        if n_support == 0 {
            return Err(Failure(
                PromiStatus::InvalidArgument,
                "n_support must be at least 1".into(),
            ));
        }
        if maps.is_null() || boxes.is_null() || box_counts.is_null() {
            return Err(null("support array"));
        }
        let cfg = match config.as_ref() {
            Some(c) => FitConfig {
                k_max: c.k_max,
                bg_mixture_enabled: c.bg_mixture_enabled,
                fg_refinement_enabled: c.fg_refinement_enabled,
                max_iterations: c.max_iterations,
            },
            None => FitConfig::default(),
        };
        let maps = std::slice::from_raw_parts(maps, n_support);
        let boxes = std::slice::from_raw_parts(boxes, n_support);
        let counts = std::slice::from_raw_parts(box_counts, n_support);
        let mut normalized = Vec::with_capacity(n_support);
        let mut labels = Vec::with_capacity(n_support);
        for i in 0..n_support {
            let map = &maps[i].as_ref().ok_or_else(|| null("feature map"))?.0;
            let raw: &[PromiBox] = match (boxes[i].is_null(), counts[i]) {
                (_, 0) => &[],
                (true, _) => return Err(null("boxes")),
                (false, n) => std::slice::from_raw_parts(boxes[i], n),
            };
            let b: Vec<BoundingBox> = raw
                .iter()
                .map(|b| BoundingBox::new(b.x_min, b.y_min, b.x_max, b.y_max))
                .collect();
            labels.push(boxes_to_patch_labels(
                &b,
                map.image_h(),
                map.image_w(),
                map.grid_h(),
                map.grid_w(),
            )?);
            normalized.push(l2_normalize(map));
        }
        let batch = SupportBatch::new(&normalized, &labels)?;
        write_out(out, PromiPrototypeSet(fit(&batch, &cfg)?))
    })
}

/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_num_background(set: *const PromiPrototypeSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.num_background())
}

/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_depth(set: *const PromiPrototypeSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.depth())
}

/// # Safety
/// `set` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_diagnostics(
    set: *const PromiPrototypeSet,
    out: *mut PromiDiagnostics,
) -> PromiStatus {
    guard(|| {
        let d = set.as_ref().ok_or_else(|| null("prototype set"))?.0.diagnostics;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *out = PromiDiagnostics {
            iterations_run: d.iterations_run,
            spawn_events: d.spawn_events,
            empty_cluster_events: d.empty_cluster_events,
            stop_reason: match d.stop_reason {
                StopReason::NotIterated => PromiStopReason::NotIterated,
                StopReason::NoFalsePositives => PromiStopReason::NoFalsePositives,
                StopReason::FixedPoint => PromiStopReason::FixedPoint,
                StopReason::MaxIterations => PromiStopReason::MaxIterations,
            },
        };
        Ok(())
    })
}

/// Copies the `(K + 1) × depth` prototype matrix (foreground row first)
/// into `out`, which must hold `len` doubles.
///
/// # Safety
/// `set` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_copy(
    set: *const PromiPrototypeSet,
    out: *mut f64,
    len: usize,
) -> PromiStatus {
    guard(|| {
        let v = set.as_ref().ok_or_else(|| null("prototype set"))?.0.vectors();
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len != v.len() {
            return Err(Failure(
                PromiStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", v.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v);
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_save(set: *const PromiPrototypeSet, path: *const c_char) -> PromiStatus {
    guard(|| {
        let s = &set.as_ref().ok_or_else(|| null("prototype set"))?.0;
        Ok(save_prototypes(s, &path_arg(path)?)?)
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_load(path: *const c_char, out: *mut *mut PromiPrototypeSet) -> PromiStatus {
    clear_out(out);
    guard(|| {
        let set = load_prototypes(&path_arg(path)?)?;
        write_out(out, PromiPrototypeSet(set))
    })
}

/// # Safety
/// `set` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn promi_prototypes_free(set: *mut PromiPrototypeSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Segments a query feature map at its image resolution.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn promi_predict(
    query: *const PromiFeatureMap,
    set: *const PromiPrototypeSet,
    out: *mut *mut PromiMask,
) -> PromiStatus {
    clear_out(out);
    guard(|| {
        let q = &query.as_ref().ok_or_else(|| null("query"))?.0;
        let s = &set.as_ref().ok_or_else(|| null("prototype set"))?.0;
        write_out(out, PromiMask(predict(&l2_normalize(q), s)?))
    })
}

/// # Safety
/// `mask` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn promi_mask_height(mask: *const PromiMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.height())
}

/// # Safety
/// `mask` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn promi_mask_width(mask: *const PromiMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.width())
}

/// Row-major `height × width` bytes, each 0 or 1, owned by the mask.
///
/// # Safety
/// `mask` must be a live handle; the pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn promi_mask_data(mask: *const PromiMask) -> *const u8 {
    mask.as_ref().map_or(ptr::null(), |m| m.0.data().as_ptr())
}

/// Writes an 8-bit grayscale PNG (0 or 255).
///
/// # Safety
/// `mask` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn promi_mask_save_png(mask: *const PromiMask, path: *const c_char) -> PromiStatus {
    guard(|| {
        let m = &mask.as_ref().ok_or_else(|| null("mask"))?.0;
        Ok(m.save_png(&path_arg(path)?)?)
    })
}

/// # Safety
/// `mask` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn promi_mask_free(mask: *mut PromiMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}
