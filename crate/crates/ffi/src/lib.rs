//! C interface to the distribution utilities, scoring rules and trained-model
//! forecasting.
//!
//! Every fallible function returns a status code and writes results through
//! out-pointers. On failure [`dl_last_error_message`] describes the error of
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use diffload::checkpoint::TrainedModel;
use diffload::config::RunConfig;
use diffload::data::{load_csv, Dataset};
use diffload::distributions::{self, Family, StableParams};
use diffload::experiment::{choose_coverage, forecast_test};
use diffload::metrics::{self, IntervalForecast, QuantileGrid};
use diffload::Error;

pub const DL_OK: i32 = 0;
pub const DL_ERR_NULL: i32 = 1;
pub const DL_ERR_DOMAIN: i32 = 2;
pub const DL_ERR_CONFIG: i32 = 3;
pub const DL_ERR_SHAPE: i32 = 4;
pub const DL_ERR_DATA: i32 = 5;
pub const DL_ERR_IO: i32 = 6;
pub const DL_ERR_NONFINITE: i32 = 7;
pub const DL_ERR_PANIC: i32 = 8;

pub const DL_FAMILY_CAUCHY: i32 = 1;
pub const DL_FAMILY_GAUSSIAN: i32 = 2;

/// Opaque trained model.
pub struct DlModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => DL_ERR_DOMAIN,
        Error::Config(_) => DL_ERR_CONFIG,
        Error::Shape { .. } => DL_ERR_SHAPE,
        Error::NonFinite(_) => DL_ERR_NONFINITE,
        Error::Io(_) => DL_ERR_IO,
        Error::Data(_) | Error::Contract(_) | Error::Checkpoint(_) | Error::Csv(_) => DL_ERR_DATA,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DL_OK
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            DL_ERR_NULL
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            DL_ERR_PANIC
        }
    }
}

unsafe fn write<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, by the caller's contract, valid for writes.
    unsafe { out.write(v) };
    Ok(())
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: non-null and, by the caller's contract, a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) };
    let s = s.to_str().map_err(|_| Fail::Lib(Error::Config(format!("{what} is not valid UTF-8"))))?;
    Ok(PathBuf::from(s))
}

fn family(code: i32) -> Result<Family, Fail> {
    match code {
        DL_FAMILY_CAUCHY => Ok(Family::Cauchy),
        DL_FAMILY_GAUSSIAN => Ok(Family::Gaussian),
        other => Err(Fail::Lib(Error::Domain(format!("unknown family code {other}")))),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Cauchy negative log-likelihood without the constant `ln pi`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_cauchy_nll(y: f64, loc: f64, scale: f64, out: *mut f64) -> i32 {
    guard(|| unsafe { write(out, distributions::cauchy_nll(y, loc, scale)?, "out") })
}

/// Gaussian negative log-likelihood without the constant `ln(2 pi)/2`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_gaussian_nll(y: f64, loc: f64, scale: f64, out: *mut f64) -> i32 {
    guard(|| unsafe { write(out, distributions::gaussian_nll(y, loc, scale)?, "out") })
}

/// Quantile at probability `p` of the given family.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_stable_quantile(family_code: i32, p: f64, loc: f64, scale: f64, out: *mut f64) -> i32 {
    guard(|| {
        let params = StableParams::new(family(family_code)?, loc, scale)?;
        unsafe { write(out, distributions::stable_quantile(p, &params)?, "out") }
    })
}

/// Scale of the sum of two independent stable variables with index `alpha`
/// (1 or 2).
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_combine_scales(alpha: f64, scale1: f64, scale2: f64, out: *mut f64) -> i32 {
    guard(|| unsafe { write(out, distributions::combine_scales(alpha, scale1, scale2)?, "out") })
}

/// Quantile-grid CRPS of outcome `y` under the given predictive law, on the
/// default 99-point grid.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_crps_quantile(family_code: i32, y: f64, loc: f64, scale: f64, out: *mut f64) -> i32 {
    guard(|| {
        let params = StableParams::new(family(family_code)?, loc, scale)?;
        unsafe { write(out, metrics::crps_quantile(y, &params, &QuantileGrid::default()), "out") }
    })
}

/// Winkler score of outcome `y` for the central interval `[lower, upper]`
/// of nominal coverage `coverage`.
///
/// # Safety
/// `out` must be null or valid for writing one `double`.
#[no_mangle]
pub unsafe extern "C" fn dl_winkler(y: f64, lower: f64, upper: f64, coverage: f64, out: *mut f64) -> i32 {
    guard(|| {
        let iv = IntervalForecast::new(lower, upper, coverage)?;
        unsafe { write(out, metrics::winkler(y, &iv), "out") }
    })
}

/// Loads a checkpoint. Release the handle with [`dl_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing
/// one pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_model_load(path: *const c_char, out: *mut *mut DlModel) -> i32 {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = TrainedModel::load(&path)?;
        unsafe { write(out, Box::into_raw(Box::new(DlModel { inner: model })), "out") }
    })
}

/// Releases a handle from [`dl_model_load`]; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        // SAFETY: produced by Box::into_raw in dl_model_load.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Forecast length of one window.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn dl_model_horizon(model: *const DlModel, out: *mut usize) -> i32 {
    guard(|| {
        // SAFETY: live handle per contract.
        let m = unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?;
        unsafe { write(out, m.inner.config().horizon, "out") }
    })
}

/// Forecasts the test split of the series in `data_csv` with `samples`
/// stochastic passes and writes the forecast CSV to `out_csv`. A `coverage`
/// in (0, 1) is used directly; any other value selects it on the validation
/// split. Splits follow the default ratios and evaluation stride.
///
/// # Safety
/// `model` must be a live handle; both paths NUL-terminated strings;
/// `n_steps` null or valid for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn dl_model_forecast(
    model: *const DlModel,
    data_csv: *const c_char,
    samples: usize,
    seed: u64,
    coverage: f64,
    out_csv: *const c_char,
    n_steps: *mut usize,
) -> i32 {
    guard(|| {
        // SAFETY: live handle per contract.
        let m = &unsafe { model.as_ref() }.ok_or(Fail::Null("model"))?.inner;
        let data = unsafe { path_arg(data_csv, "data_csv") }?;
        let out = unsafe { path_arg(out_csv, "out_csv") }?;
        let cfg = RunConfig {
            input_len: m.input_len,
            horizon: m.config().horizon,
            samples,
            seed: Some(seed),
            coverage: (coverage > 0.0 && coverage < 1.0).then_some(coverage),
            ..RunConfig::default()
        };
        cfg.validate()?;
        let frame = load_csv(&data)?;
        let ds = Dataset::prepare_with(&frame, &cfg.data_config(seed), Some(&m.standardizer))?;
        let (c, _) = choose_coverage(m, &ds, &cfg, seed)?;
        let fc = forecast_test(m, &ds, &cfg, c, seed)?;
        let mut buf = Vec::new();
        fc.write_csv(&mut buf)?;
        diffload::io::write_atomic(&out, &buf)?;
        if !n_steps.is_null() {
            unsafe { write(n_steps, fc.len(), "n_steps") }?;
        }
        Ok(())
    })
}
