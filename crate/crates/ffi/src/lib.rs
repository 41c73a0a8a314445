//! C ABI for the hatefuse classifier.
//!
//! Conventions:
//! - Every fallible function returns an [`HfStatus`]; `HF_STATUS_OK` is 0.
//! - Models are opaque handles created by [`hf_model_load`] and released
//!   with [`hf_model_free`].
//! - All strings are NUL-terminated UTF-8 owned by the caller.
//! - [`hf_last_error`] returns a thread-local message describing the most
//!   recent failure on the calling thread; the pointer stays valid until
//!   the next failing call on that thread.
//!
//! The matching header is generated into `include/hatefuse.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hatefuse::corpus::Sample;
use hatefuse::model::EnsembleModel;
use hatefuse::trainer;

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The checkpoint could not be read or decoded.
    CheckpointError = 3,
    /// Inference failed (unreadable image, missing text, shape error).
    PredictionError = 4,
    /// A panic was caught at the boundary; state may be inconsistent.
    InternalError = 5,
}

/// Opaque classifier handle.
pub struct HfModel {
    model: EnsembleModel,
    counter: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: HfStatus, message: String) -> HfStatus {
    set_last_error(message);
    status
}

/// Message for the most recent failure on this thread. Never NULL; empty
/// when no failure has occurred. Valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn hf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hf_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, HfStatus> {
    if ptr.is_null() {
        return Err(HfStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| HfStatus::InvalidUtf8)
}

/// Load a trained checkpoint and return an owned model handle in `out`.
///
/// # Safety
/// `checkpoint_path` must be a NUL-terminated string and `out` a valid
/// pointer; on success `*out` must eventually be released with
/// [`hf_model_free`].
#[no_mangle]
pub unsafe extern "C" fn hf_model_load(
    checkpoint_path: *const c_char,
    out: *mut *mut HfModel,
) -> HfStatus {
    if out.is_null() {
        return fail(HfStatus::NullArgument, "out handle is NULL".into());
    }
    let path = match unsafe { cstr_arg(checkpoint_path) } {
        Ok(s) => PathBuf::from(s),
        Err(status) => return fail(status, "bad checkpoint_path argument".into()),
    };
    let result = catch_unwind(|| trainer::load_checkpoint(&path));
    match result {
        Ok(Ok(ckpt)) => {
            let handle = Box::new(HfModel {
                model: ckpt.model,
                counter: 0,
            });
            unsafe { *out = Box::into_raw(handle) };
            HfStatus::Ok
        }
        Ok(Err(e)) => fail(HfStatus::CheckpointError, e.to_string()),
        Err(_) => fail(
            HfStatus::InternalError,
            "panic while loading checkpoint".into(),
        ),
    }
}

/// Release a handle returned by [`hf_model_load`]. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer previously returned by
/// [`hf_model_load`] that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn hf_model_free(model: *mut HfModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Classify one image with its extracted text.
///
/// `ocr_text` is the text recovered from the image (the caller runs OCR, or
/// passes an empty string for a text-free image). On success `out_label`
/// holds 0 (no hate speech) or 1 (hate speech) and `out_confidence` the
/// winning class probability in [0.5, 1].
///
/// # Safety
/// `model` must be a live handle from [`hf_model_load`]; string arguments
/// must be NUL-terminated; `out_label` and `out_confidence` must be valid
/// writable pointers.
#[no_mangle]
pub unsafe extern "C" fn hf_model_predict(
    model: *mut HfModel,
    image_path: *const c_char,
    ocr_text: *const c_char,
    out_label: *mut c_int,
    out_confidence: *mut c_double,
) -> HfStatus {
    if model.is_null() || out_label.is_null() || out_confidence.is_null() {
        return fail(
            HfStatus::NullArgument,
            "model or out pointer is NULL".into(),
        );
    }
    let image = match unsafe { cstr_arg(image_path) } {
        Ok(s) => PathBuf::from(s),
        Err(status) => return fail(status, "bad image_path argument".into()),
    };
    let text = match unsafe { cstr_arg(ocr_text) } {
        Ok(s) => s.to_string(),
        Err(status) => return fail(status, "bad ocr_text argument".into()),
    };
    let handle = unsafe { &mut *model };
    handle.counter += 1;
    let sample = Sample {
        index: format!("ffi-{}", handle.counter),
        image_path: image,
        label: None,
        ocr_text: Some(text),
    };
    let result = catch_unwind(AssertUnwindSafe(|| handle.model.forward(&sample)));
    match result {
        Ok(Ok(pred)) => {
            unsafe {
                *out_label = pred.label.code() as c_int;
                *out_confidence = pred.confidence;
            }
            HfStatus::Ok
        }
        Ok(Err(e)) => fail(HfStatus::PredictionError, e.to_string()),
        Err(_) => fail(HfStatus::InternalError, "panic during prediction".into()),
    }
}
