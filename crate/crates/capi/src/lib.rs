//! C ABI for loading fitted bound models and querying interval predictions.
//!
//! The interface follows the usual opaque-handle pattern: every function
//! returns an error code (`POBOUNDS_OK` = 0 on success), handles are created
//! by `pobounds_model_load` / `pobounds_model_from_json` and released with
//! `pobounds_model_free`, and the most recent error message is available via
//! `pobounds_last_error`. The committed header `include/pobounds.h` mirrors
//! these declarations.
//!
//! Model files are the JSON artifacts written by the CLI's `fit` command;
//! bare serialized bound models are accepted too.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DMatrix;
use pobounds::bp::{predict_bounds, BoundModel};
use pobounds::config::FitArtifact;

pub const POBOUNDS_OK: c_int = 0;
pub const POBOUNDS_ERR_NULL_POINTER: c_int = 1;
pub const POBOUNDS_ERR_INVALID_UTF8: c_int = 2;
pub const POBOUNDS_ERR_PARSE: c_int = 3;
pub const POBOUNDS_ERR_IO: c_int = 4;
pub const POBOUNDS_ERR_PREDICT: c_int = 5;
pub const POBOUNDS_ERR_INVALID_ARGUMENT: c_int = 6;
pub const POBOUNDS_ERR_PANIC: c_int = 7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Opaque model handle.
pub struct PoboundsModel {
    model: BoundModel,
    standardization: Option<Vec<(f64, f64)>>,
    n_features: usize,
}

fn parse_model(text: &str) -> Result<PoboundsModel, String> {
    if let Ok(artifact) = serde_json::from_str::<FitArtifact>(text) {
        let n_features = artifact.feature_names.len();
        return Ok(PoboundsModel {
            model: artifact.model,
            standardization: artifact.standardization,
            n_features,
        });
    }
    match serde_json::from_str::<BoundModel>(text) {
        Ok(model) => {
            let n_features = model.arms[0].anchors.ncols();
            Ok(PoboundsModel {
                model,
                standardization: None,
                n_features,
            })
        }
        Err(e) => Err(format!("not a model artifact: {e}")),
    }
}

/// # Safety
/// `s` must be a valid NUL-terminated string or NULL.
unsafe fn cstr_arg<'a>(s: *const c_char) -> Result<&'a str, c_int> {
    if s.is_null() {
        set_last_error("null string argument");
        return Err(POBOUNDS_ERR_NULL_POINTER);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        POBOUNDS_ERR_INVALID_UTF8
    })
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_last_error("internal panic");
            POBOUNDS_ERR_PANIC
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pobounds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the most recent error message (NUL-terminated, possibly truncated)
/// into `buffer`. Returns the full message length in bytes.
///
/// # Safety
/// `buffer` must point to at least `length` writable bytes, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn pobounds_last_error(buffer: *mut c_char, length: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buffer.is_null() && length > 0 {
            let n = bytes.len().min(length - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buffer, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a model from a JSON file. On success writes a handle to `out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pobounds_model_load(
    path: *const c_char,
    out: *mut *mut PoboundsModel,
) -> c_int {
    guard(|| {
        if out.is_null() {
            set_last_error("null output pointer");
            return POBOUNDS_ERR_NULL_POINTER;
        }
        let path = match cstr_arg(path) {
            Ok(p) => p,
            Err(code) => return code,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_last_error(&format!("cannot read '{path}': {e}"));
                return POBOUNDS_ERR_IO;
            }
        };
        match parse_model(&text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                POBOUNDS_OK
            }
            Err(e) => {
                set_last_error(&e);
                POBOUNDS_ERR_PARSE
            }
        }
    })
}

/// Load a model from an in-memory JSON string.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pobounds_model_from_json(
    json: *const c_char,
    out: *mut *mut PoboundsModel,
) -> c_int {
    guard(|| {
        if out.is_null() {
            set_last_error("null output pointer");
            return POBOUNDS_ERR_NULL_POINTER;
        }
        let text = match cstr_arg(json) {
            Ok(t) => t,
            Err(code) => return code,
        };
        match parse_model(text) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                POBOUNDS_OK
            }
            Err(e) => {
                set_last_error(&e);
                POBOUNDS_ERR_PARSE
            }
        }
    })
}

/// Number of covariates the model expects per query point.
///
/// # Safety
/// `model` must be a live handle from a load function.
#[no_mangle]
pub unsafe extern "C" fn pobounds_model_num_features(model: *const PoboundsModel) -> c_int {
    if model.is_null() {
        set_last_error("null model handle");
        return -1;
    }
    (*model).n_features as c_int
}

/// Lower/upper bound predictions for `n_rows` query points in row-major
/// order (raw covariate scale; the model's standardization is applied
/// internally). `arm` is the treatment arm, 0 or 1. `lower` and `upper`
/// must each have room for `n_rows` doubles.
///
/// # Safety
/// `model` must be a live handle; `features`, `lower`, `upper` must point to
/// arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn pobounds_predict(
    model: *const PoboundsModel,
    features: *const f64,
    n_rows: usize,
    n_features: usize,
    arm: c_int,
    lower: *mut f64,
    upper: *mut f64,
) -> c_int {
    guard(|| {
        if model.is_null() || features.is_null() || lower.is_null() || upper.is_null() {
            set_last_error("null pointer argument");
            return POBOUNDS_ERR_NULL_POINTER;
        }
        let handle = &*model;
        if n_rows == 0 {
            set_last_error("n_rows must be >= 1");
            return POBOUNDS_ERR_INVALID_ARGUMENT;
        }
        if n_features != handle.n_features {
            set_last_error(&format!(
                "model expects {} features, got {n_features}",
                handle.n_features
            ));
            return POBOUNDS_ERR_INVALID_ARGUMENT;
        }
        if !(0..=1).contains(&arm) {
            set_last_error("arm must be 0 or 1");
            return POBOUNDS_ERR_INVALID_ARGUMENT;
        }
        let raw = std::slice::from_raw_parts(features, n_rows * n_features);
        let x = DMatrix::from_fn(n_rows, n_features, |i, j| {
            let v = raw[i * n_features + j];
            match &handle.standardization {
                Some(stats) => (v - stats[j].0) / stats[j].1,
                None => v,
            }
        });
        match predict_bounds(&handle.model, &x, arm as u8) {
            Ok(pred) => {
                let lo = std::slice::from_raw_parts_mut(lower, n_rows);
                let hi = std::slice::from_raw_parts_mut(upper, n_rows);
                for i in 0..n_rows {
                    lo[i] = pred.lower[i];
                    hi[i] = pred.upper[i];
                }
                POBOUNDS_OK
            }
            Err(e) => {
                set_last_error(&e.to_string());
                POBOUNDS_ERR_PREDICT
            }
        }
    })
}

/// Release a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be a handle from a load function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pobounds_model_free(model: *mut PoboundsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
