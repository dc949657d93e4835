//! C ABI over the `fragmentvc` core.
//!
//! Objects are opaque handles created and destroyed by this library.
//! Every fallible function returns an [`FvcStatus`]; on failure a
//! description is available from [`fvc_last_error_message`] on the same
//! thread. Matrices are row-major `float` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fragmentvc::analysis;
use fragmentvc::audio::{self, AudioConfig, Waveform};
use fragmentvc::cli::Converter;
use fragmentvc::tensor::Tensor;
use fragmentvc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FvcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    Config = 6,
    UnsupportedAudio = 7,
    Panic = 8,
}

/// A loaded checkpoint with its configuration.
pub struct FvcModel {
    converter: Converter,
}

/// A `rows × cols` matrix of 32-bit floats.
pub struct FvcMatrix {
    tensor: Tensor<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FvcStatus {
    match e {
        Error::File { source, .. } => status_of(source),
        Error::Shape(_) => FvcStatus::Shape,
        Error::Config(_) => FvcStatus::Config,
        Error::Format { .. } | Error::Json(_) | Error::Csv(_) => FvcStatus::Format,
        Error::UnsupportedAudio { .. } | Error::Wav(_) => FvcStatus::UnsupportedAudio,
        Error::TooShort(_) | Error::Usage(_) => FvcStatus::InvalidArgument,
        Error::Io(_) => FvcStatus::Io,
    }
}

struct Fail(FvcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FvcStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FvcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FvcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FvcStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FvcStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix_arg<'a>(m: *const FvcMatrix, what: &str) -> Result<&'a Tensor<f32>, Fail> {
    m.as_ref().map(|m| &m.tensor).ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

fn matrix(tensor: Tensor<f32>) -> FvcMatrix {
    FvcMatrix { tensor }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fvc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fvc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an FVCK checkpoint. `config_path` may be null, in which case the
/// `config.json` beside the checkpoint (or the defaults) is used.
///
/// # Safety
/// `checkpoint_path` must be a valid NUL-terminated string, `config_path`
/// null or a valid string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fvc_model_load(
    checkpoint_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut FvcModel,
) -> FvcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = path_arg(checkpoint_path, "checkpoint_path")?;
        let cfg = if config_path.is_null() {
            None
        } else {
            Some(path_arg(config_path, "config_path")?)
        };
        let converter = Converter::load(&ckpt, cfg.as_deref())?;
        put(out, FvcModel { converter });
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`fvc_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fvc_model_free(model: *mut FvcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mel-bin count, upstream feature dimension and extractor count of a model.
///
/// # Safety
/// `model` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn fvc_model_dims(
    model: *const FvcModel,
    n_mel: *mut usize,
    upstream_dim: *mut usize,
    n_extractors: *mut usize,
) -> FvcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = &m.converter.config().model;
        for (p, v) in [
            (n_mel, cfg.n_mel),
            (upstream_dim, cfg.upstream_dim),
            (n_extractors, cfg.n_extractors),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies `rows × cols` floats into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable floats and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fvc_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f32,
    out: *mut *mut FvcMatrix,
) -> FvcStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(FvcStatus::InvalidArgument, "size overflow".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        put(out, matrix(Tensor::new([rows, cols], values)?));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn fvc_matrix_free(m: *mut FvcMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn fvc_matrix_shape(m: *const FvcMatrix, rows: *mut usize, cols: *mut usize) -> FvcStatus {
    guard(|| {
        let t = matrix_arg(m, "matrix")?;
        if !rows.is_null() {
            *rows = t.shape()[0];
        }
        if !cols.is_null() {
            *cols = t.shape()[1];
        }
        Ok(())
    })
}

/// Pointer to the matrix's row-major data, valid while the handle lives.
///
/// # Safety
/// `m` must be null or a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn fvc_matrix_data(m: *const FvcMatrix) -> *const f32 {
    m.as_ref().map_or(ptr::null(), |m| m.tensor.data().as_ptr())
}

/// Copies the matrix into `buf`, which must hold exactly `len` floats.
///
/// # Safety
/// `m` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fvc_matrix_copy(m: *const FvcMatrix, buf: *mut f32, len: usize) -> FvcStatus {
    guard(|| {
        let t = matrix_arg(m, "matrix")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != t.len() {
            return Err(Fail(
                FvcStatus::InvalidArgument,
                format!("buffer holds {len} floats, matrix has {}", t.len()),
            ));
        }
        ptr::copy_nonoverlapping(t.data().as_ptr(), buf, len);
        Ok(())
    })
}

/// Log-mel spectrogram (`T × 80` with the default analysis settings) of
/// 16 kHz mono samples in [-1, 1].
///
/// # Safety
/// `samples` must point to `n` readable floats and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fvc_log_mel(samples: *const f32, n: usize, out: *mut *mut FvcMatrix) -> FvcStatus {
    guard(|| {
        if samples.is_null() {
            return Err(null("samples"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let wave = Waveform::new(std::slice::from_raw_parts(samples, n).to_vec());
        let mel = audio::log_mel(&wave, &AudioConfig::default())?;
        put(out, matrix(mel.frames));
        Ok(())
    })
}

/// Pseudo-upstream source features of a log-mel spectrogram, using the
/// model's normalization and feature settings.
///
/// # Safety
/// `model` and `mel` must be live handles and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fvc_model_features(
    model: *const FvcModel,
    mel: *const FvcMatrix,
    out: *mut *mut FvcMatrix,
) -> FvcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let mel = matrix_arg(mel, "mel")?;
        if out.is_null() {
            return Err(null("out"));
        }
        put(out, matrix(m.converter.features_from_mel(mel)?));
        Ok(())
    })
}

/// Converts source features (`T × upstream_dim`) with `n_targets` log-mel
/// target utterances. Writes the converted `T × n_mel` log-mel to
/// `out_mel`. When `out_attention` is non-null it must have room for
/// `n_attention` handles, which must equal the extractor count; each
/// receives that extractor's head-combined `T × S` attention map.
///
/// # Safety
/// All handles must be live, `targets` must hold `n_targets` handles and
/// `out_attention` (if non-null) `n_attention` writable slots.
#[no_mangle]
pub unsafe extern "C" fn fvc_convert(
    model: *const FvcModel,
    source: *const FvcMatrix,
    targets: *const *const FvcMatrix,
    n_targets: usize,
    out_mel: *mut *mut FvcMatrix,
    out_attention: *mut *mut FvcMatrix,
    n_attention: usize,
) -> FvcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let src = matrix_arg(source, "source")?;
        if targets.is_null() || n_targets == 0 {
            return Err(Fail(FvcStatus::InvalidArgument, "at least one target is required".into()));
        }
        if out_mel.is_null() {
            return Err(null("out_mel"));
        }
        let tgt = std::slice::from_raw_parts(targets, n_targets)
            .iter()
            .map(|&t| matrix_arg(t, "target"))
            .collect::<Result<Vec<_>, _>>()?;
        let n_ext = m.converter.config().model.n_extractors;
        if !out_attention.is_null() && n_attention != n_ext {
            return Err(Fail(
                FvcStatus::InvalidArgument,
                format!("model has {n_ext} extractors, {n_attention} attention slots given"),
            ));
        }
        let conv = m.converter.convert(src, &tgt)?;
        let maps = conv
            .attention
            .layers
            .iter()
            .map(|w| analysis::combine_heads_rms(w).map(|c| c.cast::<f32>()))
            .collect::<Result<Vec<_>, _>>()?;
        if !out_attention.is_null() {
            for (i, map) in maps.into_iter().enumerate() {
                put(out_attention.add(i), matrix(map));
            }
        }
        put(out_mel, matrix(conv.mel));
        Ok(())
    })
}

/// Root-mean-square over heads of `heads × rows × cols` attention weights.
///
/// # Safety
/// `weights` must point to `heads * rows * cols` floats and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn fvc_combine_heads_rms(
    weights: *const f32,
    heads: usize,
    rows: usize,
    cols: usize,
    out: *mut *mut FvcMatrix,
) -> FvcStatus {
    guard(|| {
        if weights.is_null() {
            return Err(null("weights"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = heads
            .checked_mul(rows)
            .and_then(|v| v.checked_mul(cols))
            .ok_or_else(|| Fail(FvcStatus::InvalidArgument, "size overflow".into()))?;
        let data = std::slice::from_raw_parts(weights, n).iter().map(|&v| v as f64).collect();
        let w = Tensor::new([heads, rows, cols], data)?;
        put(out, matrix(analysis::combine_heads_rms(&w)?.cast()));
        Ok(())
    })
}

/// Diagonality score of an attention map (0 for a perfect diagonal).
///
/// # Safety
/// `map` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fvc_diagonality(map: *const FvcMatrix, out: *mut f64) -> FvcStatus {
    guard(|| {
        let m = matrix_arg(map, "map")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = analysis::diagonality(&m.cast())?;
        Ok(())
    })
}
