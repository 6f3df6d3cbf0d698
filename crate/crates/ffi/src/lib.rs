//! C ABI over `anodet_core`.
//!
//! Every function returns an [`AnodetStatus`]; on failure the message is kept
//! per thread and read with [`anodet_last_error_message`]. Images cross the
//! boundary as contiguous `float` arrays in channel-major `(3, H, W)` order
//! with values in `[-1, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use anodet_core::anomaly_scorer::{ssim, Metric, Scorer, ScorerConfig, SsimParams};
use anodet_core::evaluation::{auc, average_precision, roc_points};
use anodet_core::tensor::Array;
use anodet_core::translator::{Checkpoint, Domain, TranslatorModel};
use anodet_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnodetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Checkpoint = 6,
    Numeric = 7,
    DegenerateInput = 8,
    InsufficientData = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnodetMetric {
    Ssim = 0,
    Perceptual = 1,
}

/// Opaque handle to a loaded translator.
pub struct AnodetModel {
    model: TranslatorModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AnodetStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Bounds(_) => AnodetStatus::InvalidArgument,
        Error::Shape(_) => AnodetStatus::Shape,
        Error::InsufficientData(_) => AnodetStatus::InsufficientData,
        Error::Numeric(_) => AnodetStatus::Numeric,
        Error::DegenerateInput(_) => AnodetStatus::DegenerateInput,
        Error::Checkpoint(_) => AnodetStatus::Checkpoint,
        Error::Format { .. } | Error::Image { .. } => AnodetStatus::Format,
        Error::Io { .. } => AnodetStatus::Io,
    }
}

struct Fail(AnodetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AnodetStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, recording any failure or panic.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AnodetStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AnodetStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            AnodetStatus::Panic
        }
    }
}

/// Borrow `len` elements, rejecting null and overflowing sizes.
unsafe fn view<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn image_len(height: usize, width: usize) -> Result<usize, Fail> {
    3usize
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail(AnodetStatus::InvalidArgument, format!("bad image size {height}x{width}")))
}

unsafe fn read_image(p: *const f32, height: usize, width: usize, what: &str) -> Result<Array<f32>, Fail> {
    let n = image_len(height, width)?;
    let data = view(p, n, what)?.to_vec();
    Ok(Array::from_vec(&[3, height, width], data)?)
}

fn domain(code: u32) -> Result<Domain, Fail> {
    match code {
        0 => Ok(Domain::X),
        1 => Ok(Domain::Y),
        _ => Err(Fail(AnodetStatus::InvalidArgument, format!("domain {code} is not 0 (X) or 1 (Y)"))),
    }
}

/// Message for the last failing call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn anodet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn anodet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by `anodet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
/// Release the handle with [`anodet_model_free`].
#[no_mangle]
pub unsafe extern "C" fn anodet_model_load(path: *const c_char, out: *mut *mut AnodetModel) -> AnodetStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(AnodetStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(AnodetModel { model: ck.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`anodet_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn anodet_model_free(model: *mut AnodetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Style code length of the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn anodet_model_style_dim(model: *const AnodetModel, out: *mut usize) -> AnodetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.config().style_dim;
        Ok(())
    })
}

/// Single-pass reconstruction: content from `source`, style and decoder
/// from `target` (0 = X, 1 = Y). `out` receives `3 * height * width` floats.
///
/// # Safety
/// `image` must hold `3 * height * width` floats and `out` as many writable
/// slots; they may not overlap.
#[no_mangle]
pub unsafe extern "C" fn anodet_reconstruct(
    model: *const AnodetModel,
    image: *const f32,
    height: usize,
    width: usize,
    source: u32,
    target: u32,
    out: *mut f32,
) -> AnodetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = read_image(image, height, width, "image")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = anodet_core::anomaly_scorer::reconstruct(&x, &m.model, domain(source)?, domain(target)?)?;
        ptr::copy_nonoverlapping(r.data().as_ptr(), out, r.data().len());
        Ok(())
    })
}

/// Anomaly score of one patch with default scorer settings (X content, Y
/// style and decoder). `metric` is an [`AnodetMetric`] value. Higher means
/// more anomalous.
///
/// # Safety
/// `image` must hold `3 * height * width` floats; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn anodet_score(
    model: *const AnodetModel,
    metric: u32,
    image: *const f32,
    height: usize,
    width: usize,
    out_score: *mut f64,
) -> AnodetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = read_image(image, height, width, "image")?;
        if out_score.is_null() {
            return Err(null("out_score"));
        }
        let cfg = ScorerConfig {
            metric: match metric {
                m if m == AnodetMetric::Ssim as u32 => Metric::Ssim,
                m if m == AnodetMetric::Perceptual as u32 => Metric::Perceptual,
                m => return Err(Fail(AnodetStatus::InvalidArgument, format!("unknown metric {m}"))),
            },
            ..ScorerConfig::default()
        };
        let (s, _) = Scorer::new(&m.model, cfg)?.score(&x)?;
        *out_score = s;
        Ok(())
    })
}

/// Mean SSIM of two images of `channels x height x width` floats in `[-1, 1]`
/// with an 11-tap Gaussian window.
///
/// # Safety
/// `a` and `b` must each hold `channels * height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn anodet_ssim(
    a: *const f32,
    b: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> AnodetStatus {
    guard(|| {
        let n = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .filter(|&n| n > 0)
            .ok_or_else(|| Fail(AnodetStatus::InvalidArgument, "empty image".into()))?;
        let shape = [channels, height, width];
        let a = Array::from_vec(&shape, view(a, n, "a")?.to_vec())?;
        let b = Array::from_vec(&shape, view(b, n, "b")?.to_vec())?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ssim(&a, &b, &SsimParams::default())?;
        Ok(())
    })
}

unsafe fn scored(scores: *const f64, labels: *const u8, n: usize) -> Result<(Vec<f64>, Vec<bool>), Fail> {
    let s = view(scores, n, "scores")?.to_vec();
    let l = view(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
    Ok((s, l))
}

/// Area under the ROC curve; `labels[i] != 0` marks an anomaly.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn anodet_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> AnodetStatus {
    guard(|| {
        let (s, l) = scored(scores, labels, n)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = auc(&roc_points(&s, &l)?);
        Ok(())
    })
}

/// Average precision with anomalies as the positive class.
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn anodet_average_precision(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> AnodetStatus {
    guard(|| {
        let (s, l) = scored(scores, labels, n)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = average_precision(&s, &l)?;
        Ok(())
    })
}
