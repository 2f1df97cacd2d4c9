//! C interface to trained `jointslu` checkpoints.
//!
//! Handles are opaque and owned by the caller: every `*_load`/`*_predict`
//! success must be paired with the matching `*_free`. Functions return a
//! [`JsluStatus`]; on failure [`jslu_last_error`] describes the problem for
//! the calling thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use jointslu::cli::{load_checkpoint, Checkpoint};
use jointslu::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JsluStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// File could not be read.
    Io = 3,
    /// Not a checkpoint, truncated, or written by another format version.
    Corrupt = 4,
    /// Bad argument, e.g. an empty sentence or an index out of range.
    InvalidInput = 5,
    /// The model produced a non-finite value.
    Numerical = 6,
    /// The model lacks the requested output (e.g. attention).
    Unsupported = 7,
    /// Internal failure; the handle should be discarded.
    Panic = 8,
}

/// Loaded checkpoint.
pub struct JsluModel {
    inner: Checkpoint,
}

/// Tags, intent and attention for one sentence.
pub struct JsluPrediction {
    tags: Vec<CString>,
    intent: Option<CString>,
    attention: Vec<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> JsluStatus {
    match e {
        Error::Io { .. } => JsluStatus::Io,
        Error::CorruptCheckpoint(_) | Error::VersionMismatch { .. } | Error::ShapeMismatch { .. } | Error::Json(_) => {
            JsluStatus::Corrupt
        }
        Error::NonFinite(_) => JsluStatus::Numerical,
        Error::Unsupported(_) => JsluStatus::Unsupported,
        _ => JsluStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (JsluStatus, String)>) -> JsluStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            JsluStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            JsluStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (JsluStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (JsluStatus, String) {
    (JsluStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (JsluStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (JsluStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn c_string(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed")
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn jslu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn jslu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `jointslu train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn jslu_model_load(path: *const c_char, out: *mut *mut JsluModel) -> JsluStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let inner = load_checkpoint(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(JsluModel { inner }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`jslu_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jslu_model_free(model: *mut JsluModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of slot tags the model predicts (0 without a tag head).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jslu_model_num_tags(model: *const JsluModel) -> usize {
    model.as_ref().map_or(0, |m| {
        if m.inner.model.config.mode.has_tag_head() {
            m.inner.vocab.num_tags()
        } else {
            0
        }
    })
}

/// Number of intents (0 without an intent head).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jslu_model_num_intents(model: *const JsluModel) -> usize {
    model.as_ref().map_or(0, |m| {
        if m.inner.model.config.mode.has_intent_head() {
            m.inner.vocab.num_intents()
        } else {
            0
        }
    })
}

/// Tags and classifies one sentence of `n` tokens.
///
/// # Safety
/// `tokens` must point to `n` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn jslu_predict(
    model: *const JsluModel,
    tokens: *const *const c_char,
    n: usize,
    out: *mut *mut JsluPrediction,
) -> JsluStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        if n == 0 {
            return Err((JsluStatus::InvalidInput, "sentence has no tokens".into()));
        }
        let mut words = Vec::with_capacity(n);
        for i in 0..n {
            let tok = read_str(*tokens.add(i), &format!("token {i}"))?;
            words.push(m.vocab.word_index(tok));
        }
        let p = m.model.predict(&words).map_err(lib_err)?;
        let tags = p
            .tags
            .unwrap_or_default()
            .iter()
            .map(|&t| c_string(m.vocab.tag(t)))
            .collect();
        let pred = JsluPrediction {
            tags,
            intent: p.intent.map(|c| c_string(m.vocab.intent(c))),
            attention: p.attention.unwrap_or_default(),
        };
        *out = Box::into_raw(Box::new(pred));
        Ok(())
    })
}

/// Releases a prediction; null is ignored.
///
/// # Safety
/// `pred` must come from [`jslu_predict`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jslu_prediction_free(pred: *mut JsluPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Number of predicted tags (the sentence length, or 0 without a tag head).
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jslu_prediction_num_tags(pred: *const JsluPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.tags.len())
}

/// Tag of token `i`, or null when out of range. Owned by `pred`.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jslu_prediction_tag(pred: *const JsluPrediction, i: usize) -> *const c_char {
    pred.as_ref()
        .and_then(|p| p.tags.get(i))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Predicted intent, or null without an intent head. Owned by `pred`.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn jslu_prediction_intent(pred: *const JsluPrediction) -> *const c_char {
    pred.as_ref()
        .and_then(|p| p.intent.as_ref())
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Copies the raw per-token attention weights into `buf` (capacity `cap`).
/// `*len` receives the number of weights even when `buf` is too small, in
/// which case nothing is copied and `InvalidInput` is returned.
///
/// # Safety
/// `buf` must hold `cap` floats (or be null with `cap == 0`); `len` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn jslu_prediction_attention(
    pred: *const JsluPrediction,
    buf: *mut f32,
    cap: usize,
    len: *mut usize,
) -> JsluStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("prediction"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = p.attention.len();
        if p.attention.is_empty() {
            return Err((JsluStatus::Unsupported, "model has no attention aggregator".into()));
        }
        if cap < p.attention.len() {
            return Err((
                JsluStatus::InvalidInput,
                format!("buffer holds {cap} weights, {} needed", p.attention.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(p.attention.as_ptr(), buf, p.attention.len());
        Ok(())
    })
}
