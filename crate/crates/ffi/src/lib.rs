//! C ABI over `fluxrnn`: load a trained checkpoint behind an opaque handle,
//! run predictions, and call the radiation, NRMSE and extreme-flagging
//! routines on caller-owned buffers.
//!
//! Every fallible function returns a [`FluxStatus`]. On failure the message
//! is available from [`flux_last_error_message`] on the same thread. Panics
//! never cross the boundary; they surface as `FLUX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fluxrnn::checkpoint::{load_checkpoint, CheckpointFile};
use fluxrnn::extremes::{flag_extremes, AnomalySeries, ExtremeConfig, TailMode};
use fluxrnn::rnn::predict;
use fluxrnn::solar::{daily_clearsky_mean, SiteLocation};
use fluxrnn::timeseries::Date;
use fluxrnn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    ShapeMismatch = 5,
    InsufficientData = 6,
    ZeroRange = 7,
    NonFinite = 8,
    Other = 9,
    Panic = 10,
}

/// Anomalies that define the low-tail threshold in [`flux_flag_extremes`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxTail {
    Full = 0,
    NegativeOnly = 1,
}

/// A loaded checkpoint. Create with [`flux_model_load`], release with
/// [`flux_model_free`].
pub struct FluxModel {
    checkpoint: CheckpointFile,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> FluxStatus {
    match err {
        Error::InvalidArgument(_) | Error::LengthMismatch { .. } | Error::SingleSample(_) => {
            FluxStatus::InvalidArgument
        }
        Error::Io { .. } => FluxStatus::Io,
        Error::BadMagic | Error::VersionUnsupported(_) | Error::TruncatedFile | Error::InvalidCheckpoint(_) => {
            FluxStatus::BadCheckpoint
        }
        Error::ShapeMismatch(_) => FluxStatus::ShapeMismatch,
        Error::InsufficientData { .. } => FluxStatus::InsufficientData,
        Error::ZeroRange => FluxStatus::ZeroRange,
        Error::NonFiniteActivation => FluxStatus::NonFinite,
        _ => FluxStatus::Other,
    }
}

struct Failure(FluxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FluxStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FluxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            FluxStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            FluxStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        Ok(&[])
    } else if ptr.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        Ok(&mut [])
    } else if ptr.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(ptr, len))
    }
}

unsafe fn model_ref<'a>(model: *const FluxModel) -> Result<&'a FluxModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn flux_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer. On
/// success `*out` owns a model that must be released with
/// [`flux_model_free`]; on failure it is set to null.
#[no_mangle]
pub unsafe extern "C" fn flux_model_load(path: *const c_char, out: *mut *mut FluxModel) -> FluxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(FluxStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let checkpoint = load_checkpoint(Path::new(path))?;
        let names = checkpoint
            .feature_names
            .iter()
            .map(|n| CString::new(n.as_str()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Failure(FluxStatus::BadCheckpoint, "feature name contains NUL".into()))?;
        *out = Box::into_raw(Box::new(FluxModel { checkpoint, names }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`flux_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flux_model_free(model: *mut FluxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Days per input window; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn flux_model_window(model: *const FluxModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.window)
}

/// Features per day; 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn flux_model_n_features(model: *const FluxModel) -> usize {
    model.as_ref().map_or(0, |m| m.names.len())
}

/// Name of feature `index` in input order, or null when out of range. The
/// string lives as long as the model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn flux_model_feature_name(model: *const FluxModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.names.get(index)).map_or(std::ptr::null(), |n| n.as_ptr())
}

fn predict_windows(m: &FluxModel, features: &[f64], out: &mut [f64]) -> Result<(), Failure> {
    let ck = &m.checkpoint;
    let per_window = ck.window * m.names.len();
    if features.len() != per_window * out.len() {
        return Err(Error::LengthMismatch { expected: per_window * out.len(), actual: features.len() }.into());
    }
    let mut buf = vec![0.0; per_window];
    for (window, slot) in features.chunks_exact(per_window).zip(out.iter_mut()) {
        buf.copy_from_slice(window);
        if let Some(s) = &ck.standardizer {
            s.apply_window(&mut buf);
        }
        *slot = predict(&ck.params, &buf)?;
    }
    Ok(())
}

/// GPP for one window of raw (unstandardized) features laid out day-major:
/// `features[day * n_features + feature]`, `len == window * n_features`.
///
/// # Safety
/// `features` must hold `len` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flux_model_predict(
    model: *const FluxModel,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> FluxStatus {
    flux_model_predict_batch(model, features, len, out, 1)
}

/// GPP for `n_windows` consecutive windows in the layout of
/// [`flux_model_predict`]; `len == n_windows * window * n_features`.
///
/// # Safety
/// `features` must hold `len` doubles and `out` room for `n_windows`.
#[no_mangle]
pub unsafe extern "C" fn flux_model_predict_batch(
    model: *const FluxModel,
    features: *const f64,
    len: usize,
    out: *mut f64,
    n_windows: usize,
) -> FluxStatus {
    guard(|| {
        let m = model_ref(model)?;
        let features = slice(features, len, "features")?;
        let out = slice_mut(out, n_windows, "out")?;
        predict_windows(m, features, out)
    })
}

/// Daily mean clear-sky shortwave radiation (W m⁻²) at `latitude_deg` on day
/// of year `doy` (1..=366) with broadband transmittance in (0, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flux_clearsky_mean(
    latitude_deg: f64,
    doy: u32,
    transmittance: f64,
    out: *mut f64,
) -> FluxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let site = SiteLocation::from_degrees(latitude_deg, 0.0)?;
        // Day 366 only exists in leap years.
        let date = Date::from_yo_opt(2000, doy)
            .ok_or_else(|| Error::InvalidArgument(format!("day of year {doy} outside 1..=366")))?;
        *out = daily_clearsky_mean(site, date, transmittance)?;
        Ok(())
    })
}

/// RMSE of `preds` against `obs`, divided by the range of `obs`.
///
/// # Safety
/// `preds` and `obs` must hold `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flux_nrmse(preds: *const f64, obs: *const f64, n: usize, out: *mut f64) -> FluxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let preds = slice(preds, n, "preds")?;
        let obs = slice(obs, n, "obs")?;
        *out = fluxrnn::eval::nrmse(preds, obs)?;
        Ok(())
    })
}

/// Flags low-tail anomaly runs of at least `min_run` consecutive days.
/// NaN anomalies are missing days; they are never flagged and break runs.
/// `tail` is a [`FluxTail`] value. Writes 1 or 0 per day to `flags`, and
/// the threshold to `threshold` when it is non-null (NaN when no anomaly is
/// negative in negative-only mode).
///
/// # Safety
/// `anomalies` must hold `n` doubles, `flags` room for `n` bytes, and
/// `threshold` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn flux_flag_extremes(
    anomalies: *const f64,
    n: usize,
    quantile: f64,
    min_run: usize,
    tail: u32,
    flags: *mut u8,
    threshold: *mut f64,
) -> FluxStatus {
    guard(|| {
        let values = slice(anomalies, n, "anomalies")?;
        let flags = slice_mut(flags, n, "flags")?;
        let tail = match tail {
            t if t == FluxTail::Full as u32 => TailMode::Full,
            t if t == FluxTail::NegativeOnly as u32 => TailMode::NegativeOnly,
            t => return Err(Error::InvalidArgument(format!("unknown tail mode {t}")).into()),
        };
        let series = AnomalySeries {
            start: Date::from_ymd_opt(2000, 1, 1).expect("valid date"),
            values: values.iter().map(|&v| (!v.is_nan()).then_some(v)).collect(),
        };
        let mask = flag_extremes(&series, &ExtremeConfig { quantile, min_run, tail })?;
        for (f, &m) in flags.iter_mut().zip(&mask.flags) {
            *f = u8::from(m);
        }
        if let Some(t) = threshold.as_mut() {
            *t = mask.threshold.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}
