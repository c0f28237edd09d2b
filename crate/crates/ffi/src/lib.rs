//! C ABI over the gaze predictor.
//!
//! Models live behind an opaque `CueingModel` handle created by
//! `cueing_model_new` or `cueing_model_load` and released with
//! `cueing_model_free`. Every fallible call returns a `CueingStatus`; on
//! failure `cueing_last_error` describes what went wrong on the calling thread.
//!
//! Images cross the boundary as planar `f32` RGB (`3 × height × width`, values
//! in `[0, 1]`) and gaze maps as row-major `f32` (`height × width`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cueing::data::{GazeMap, Image};
use cueing::metrics::pixel_level_metrics;
use cueing::model::{load_checkpoint, save_checkpoint, ModelConfig};
use cueing::render::upsample_points;
use cueing::tokenizer::PointVector;
use cueing::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueingStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Dimension = 5,
    Config = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Opaque model handle.
pub struct CueingModel {
    inner: cueing::model::CueingModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CueingStatus, msg: impl Into<String>) -> CueingStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> CueingStatus {
    match e {
        Error::Io { .. } | Error::Image { .. } => CueingStatus::Io,
        Error::Checkpoint(_) => CueingStatus::Checkpoint,
        Error::Dimension(_) | Error::Shape { .. } => CueingStatus::Dimension,
        Error::Config(_) | Error::Parse { .. } => CueingStatus::Config,
        Error::MissingGrad(_) | Error::Invalid(_) => CueingStatus::InvalidArgument,
    }
}

fn from_error(e: Error) -> CueingStatus {
    let status = status_of(&e);
    fail(status, e.to_string())
}

/// Run `f`, turning panics into `Internal`.
fn guard(f: impl FnOnce() -> CueingStatus) -> CueingStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CueingStatus::Internal, "internal panic"),
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, CueingStatus> {
    if path.is_null() {
        return Err(fail(CueingStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(CueingStatus::InvalidArgument, "path is not valid UTF-8")),
    }
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cueing_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cueing_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create a freshly initialized model with default architecture at the given
/// token count and input size.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_new(tokens: usize, width: usize, height: usize, seed: u64, out: *mut *mut CueingModel) -> CueingStatus {
    guard(|| {
        if out.is_null() {
            return fail(CueingStatus::NullPointer, "out is null");
        }
        let cfg = ModelConfig {
            tokens,
            width,
            height,
            ..ModelConfig::default()
        };
        match cueing::model::CueingModel::init(cfg, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CueingModel { inner }));
                CueingStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_load(path: *const c_char, out: *mut *mut CueingModel) -> CueingStatus {
    guard(|| {
        if out.is_null() {
            return fail(CueingStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CueingModel { inner }));
                CueingStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_save(model: *const CueingModel, path: *const c_char) -> CueingStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(CueingStatus::NullPointer, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_checkpoint(&m.inner, &path) {
            Ok(()) => CueingStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_free(model: *mut CueingModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_shape(model: *const CueingModel, tokens: *mut usize, width: *mut usize, height: *mut usize) -> CueingStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(CueingStatus::NullPointer, "model is null");
        };
        if tokens.is_null() || width.is_null() || height.is_null() {
            return fail(CueingStatus::NullPointer, "output pointer is null");
        }
        let c = m.inner.config();
        *tokens = c.tokens;
        *width = c.width;
        *height = c.height;
        CueingStatus::Ok
    })
}

/// Number of parameters, optionally counting only the unfrozen ones.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_param_count(model: *const CueingModel, trainable_only: bool, out: *mut usize) -> CueingStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(CueingStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(CueingStatus::NullPointer, "out is null");
        }
        *out = m.inner.count_params(trainable_only);
        CueingStatus::Ok
    })
}

/// Predict one gaze value per token for a planar RGB image of the model's input size.
///
/// # Safety
/// `rgb` must hold `3 * height * width` floats; `out_points` must hold `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn cueing_model_predict(
    model: *const CueingModel,
    rgb: *const f32,
    height: usize,
    width: usize,
    out_points: *mut f32,
    out_len: usize,
) -> CueingStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(CueingStatus::NullPointer, "model is null");
        };
        if rgb.is_null() || out_points.is_null() {
            return fail(CueingStatus::NullPointer, "buffer is null");
        }
        let tokens = m.inner.config().tokens;
        if out_len != tokens {
            return fail(CueingStatus::Dimension, format!("output holds {out_len} values but the model predicts {tokens}"));
        }
        let Some(n) = height.checked_mul(width).and_then(|v| v.checked_mul(3)) else {
            return fail(CueingStatus::Dimension, "image size overflows");
        };
        let data = std::slice::from_raw_parts(rgb, n).to_vec();
        let image = match Image::from_vec(height, width, data) {
            Ok(i) => i,
            Err(e) => return from_error(e),
        };
        match m.inner.predict(&image) {
            Ok(p) => {
                let out = std::slice::from_raw_parts_mut(out_points, out_len);
                for (o, v) in out.iter_mut().zip(&p.values) {
                    *o = *v as f32;
                }
                CueingStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Render token predictions as a `height × width` gaze map blurred with `sigma`
/// pixels (0 skips the blur).
///
/// # Safety
/// `points` must hold `n_points` floats; `out_map` must hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn cueing_upsample(
    points: *const f32,
    n_points: usize,
    height: usize,
    width: usize,
    sigma: f64,
    out_map: *mut f32,
) -> CueingStatus {
    guard(|| {
        if points.is_null() || out_map.is_null() {
            return fail(CueingStatus::NullPointer, "buffer is null");
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return fail(CueingStatus::InvalidArgument, format!("sigma must be a non-negative number, got {sigma}"));
        }
        let Some(n) = height.checked_mul(width) else {
            return fail(CueingStatus::Dimension, "map size overflows");
        };
        let values = std::slice::from_raw_parts(points, n_points).iter().map(|&v| f64::from(v)).collect();
        match upsample_points(&PointVector::new(values), height, width, sigma) {
            Ok(map) => {
                std::slice::from_raw_parts_mut(out_map, n).copy_from_slice(map.data());
                CueingStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// KL divergence (ground truth as reference) and Pearson correlation of two
/// equally sized maps. `cc_defined` is false when either map is constant.
///
/// # Safety
/// `pred` and `gt` must each hold `height * width` floats; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cueing_pixel_metrics(
    pred: *const f32,
    gt: *const f32,
    height: usize,
    width: usize,
    kl: *mut f64,
    cc: *mut f64,
    cc_defined: *mut bool,
) -> CueingStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() || kl.is_null() || cc.is_null() || cc_defined.is_null() {
            return fail(CueingStatus::NullPointer, "pointer argument is null");
        }
        let Some(n) = height.checked_mul(width) else {
            return fail(CueingStatus::Dimension, "map size overflows");
        };
        let load = |p: *const f32| GazeMap::from_vec(height, width, std::slice::from_raw_parts(p, n).to_vec());
        let (p, g) = match (load(pred), load(gt)) {
            (Ok(p), Ok(g)) => (p, g),
            (Err(e), _) | (_, Err(e)) => return from_error(e),
        };
        match pixel_level_metrics(&p, &g) {
            Ok(m) => {
                *kl = m.kl;
                *cc = m.cc.unwrap_or(f64::NAN);
                *cc_defined = m.cc.is_some();
                CueingStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
