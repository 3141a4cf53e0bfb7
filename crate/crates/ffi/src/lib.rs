//! C ABI over the v2c engine.
//!
//! Every fallible function returns a [`V2cStatus`]; on failure the message is
//! available from [`v2c_last_error`] on the same thread. Strings returned
//! through `char **` out-parameters are owned by the caller and must be
//! released with [`v2c_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use v2c::checkpoint::Checkpoint;
use v2c::data::FeatureFile;
use v2c::error::V2cError;
use v2c::mapper::{self, RobotVocabulary};

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V2cStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// Input dimensions do not match the model.
    Shape = 5,
    Checksum = 6,
    Version = 7,
    Numeric = 8,
    Panic = 9,
}

/// Loaded checkpoint: model parameters plus its vocabulary.
pub struct V2cModel {
    checkpoint: Checkpoint,
}

/// Robot vocabulary with its similarity threshold.
pub struct V2cRobotVocab {
    vocab: RobotVocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(V2cStatus, String);

impl From<V2cError> for Failure {
    fn from(e: V2cError) -> Self {
        let status = match &e {
            V2cError::Usage(_) => V2cStatus::InvalidArgument,
            V2cError::Shape(_) | V2cError::Config(_) => V2cStatus::Shape,
            V2cError::Format(_) | V2cError::Parse { .. } | V2cError::UnknownToken(_) => V2cStatus::Format,
            V2cError::VersionMismatch { .. } => V2cStatus::Version,
            V2cError::Checksum => V2cStatus::Checksum,
            V2cError::NonFiniteLoss { .. } => V2cStatus::Numeric,
            V2cError::Io { .. } => V2cStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: V2cStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Run `f`, translating errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> V2cStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            V2cStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            set_last_error(&format!("internal panic: {msg}"));
            V2cStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(V2cStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(V2cStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(V2cStatus::NullPointer, format!("{what} is null")))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(V2cStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).or_else(|_| fail(V2cStatus::Format, "output contains a NUL byte"))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn v2c_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn v2c_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn v2c_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_model_load(path: *const c_char, out: *mut *mut V2cModel) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(V2cModel { checkpoint }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from `v2c_model_load` and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn v2c_model_free(model: *mut V2cModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Report model dimensions. Any out-pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_model_dims(
    model: *const V2cModel,
    feature_dim: *mut usize,
    n_steps: *mut usize,
    hidden: *mut usize,
    vocab_size: *mut usize,
) -> V2cStatus {
    guard(|| {
        let cfg = &ref_arg(model, "model")?.checkpoint.model.config;
        for (p, v) in [(feature_dim, cfg.feature_dim), (n_steps, cfg.n_steps), (hidden, cfg.hidden), (vocab_size, cfg.vocab_size)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

fn translate(model: &V2cModel, file: &FeatureFile) -> Result<String, Failure> {
    let cfg = &model.checkpoint.model.config;
    if file.feature_dim != cfg.feature_dim {
        return fail(V2cStatus::Shape, format!("feature dimension mismatch: expected {}, found {}", cfg.feature_dim, file.feature_dim));
    }
    let rows = file.prepare(cfg.n_steps)?.rows;
    let decoded = model.checkpoint.model.translate(&rows)?;
    Ok(model.checkpoint.vocab.render(&decoded.tokens).join(" "))
}

/// Greedily translate `n_frames` row-major frames of `dim` values each.
/// Frames are sampled or padded to the model's step count; `pad` supplies
/// the pad frame (`dim` values) or is null for zeros. On success `*out`
/// receives the space-separated command.
///
/// # Safety
/// `frames` must hold `n_frames * dim` doubles; `pad`, if non-null, `dim`
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_translate_frames(
    model: *const V2cModel,
    frames: *const f64,
    n_frames: usize,
    dim: usize,
    pad: *const f64,
    out: *mut *mut c_char,
) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let model = ref_arg(model, "model")?;
        if frames.is_null() {
            return fail(V2cStatus::NullPointer, "frames is null");
        }
        let Some(total) = n_frames.checked_mul(dim) else {
            return fail(V2cStatus::InvalidArgument, "n_frames * dim overflows");
        };
        if dim == 0 || n_frames == 0 {
            return fail(V2cStatus::InvalidArgument, "n_frames and dim must be positive");
        }
        let data = std::slice::from_raw_parts(frames, total);
        let pad = if pad.is_null() { vec![0.0; dim] } else { std::slice::from_raw_parts(pad, dim).to_vec() };
        let file = FeatureFile::new(pad, data.chunks(dim).map(<[f64]>::to_vec).collect())?;
        *out = to_c_string(translate(model, &file)?)?;
        Ok(())
    })
}

/// Greedily translate one feature file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_translate_file(model: *const V2cModel, path: *const c_char, out: *mut *mut c_char) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let model = ref_arg(model, "model")?;
        let path = str_arg(path, "path")?;
        let file = FeatureFile::load(Path::new(path))?;
        *out = to_c_string(translate(model, &file).map_err(|Failure(s, m)| Failure(s, format!("{path}: {m}")))?)?;
        Ok(())
    })
}

/// Load a robot vocabulary file (`slot<TAB>word` lines).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_robot_vocab_load(path: *const c_char, threshold: f64, out: *mut *mut V2cRobotVocab) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let vocab = RobotVocabulary::load(Path::new(str_arg(path, "path")?), threshold)?;
        *out = Box::into_raw(Box::new(V2cRobotVocab { vocab }));
        Ok(())
    })
}

/// Parse a robot vocabulary from text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_robot_vocab_parse(text: *const c_char, threshold: f64, out: *mut *mut V2cRobotVocab) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let vocab = RobotVocabulary::parse(str_arg(text, "text")?, threshold)?;
        *out = Box::into_raw(Box::new(V2cRobotVocab { vocab }));
        Ok(())
    })
}

/// Release a robot vocabulary. Null is ignored.
///
/// # Safety
/// `vocab` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn v2c_robot_vocab_free(vocab: *mut V2cRobotVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Map a space-separated command onto the robot vocabulary. `*accepted`
/// is set to 1 or 0; `*out` receives the resolved command when accepted
/// and the rejection reason otherwise.
///
/// # Safety
/// `vocab` must be a live handle, `command` a NUL-terminated string, and
/// `accepted`/`out` writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_map_command(
    vocab: *const V2cRobotVocab,
    command: *const c_char,
    accepted: *mut c_int,
    out: *mut *mut c_char,
) -> V2cStatus {
    guard(|| {
        check_out(accepted, "accepted")?;
        check_out(out, "out")?;
        *out = ptr::null_mut();
        let vocab = &ref_arg(vocab, "vocab")?.vocab;
        let tokens: Vec<String> = str_arg(command, "command")?.split_whitespace().map(str::to_lowercase).collect();
        let mapped = mapper::map_command(&tokens, vocab);
        *accepted = c_int::from(mapped.accepted);
        let text = if mapped.accepted { mapped.resolved_text() } else { mapped.reason.unwrap_or_default() };
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Normalized edit-distance similarity in `[0, 1]`.
///
/// # Safety
/// `a` and `b` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn v2c_similarity(a: *const c_char, b: *const c_char, out: *mut f64) -> V2cStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = mapper::similarity(str_arg(a, "a")?, str_arg(b, "b")?);
        Ok(())
    })
}
