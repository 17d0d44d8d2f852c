//! C ABI for the histfun library: opaque handles over datasets and fits,
//! integer status codes, and a thread-local last-error message.
//!
//! Every function is panic-safe: panics are caught at the boundary and
//! reported as [`HfStatus::InternalPanic`]. Pointers returned by `*_new`
//! constructors own their allocation and must be released with the
//! matching `*_free`; all other pointer arguments are borrowed for the
//! duration of the call only.

use std::cell::RefCell;
use std::ffi::CString;
use std::panic::{catch_unwind, AssertUnwindSafe};

use libc::{c_char, size_t};
use nalgebra::{DMatrix, DVector};

use histfun::{
    bootstrap_band, center, eval_spline, make_basis, tune_fit, DesignSystem, Error,
    FunctionalDataset, NgbConfig, NgbFit,
};

/// Status code returned by fallible operations.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HfStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Input validation failed; details via `hf_last_error_message`.
    InvalidInput = 2,
    /// A numerical routine failed to produce a result.
    NumericalFailure = 3,
    /// An output buffer was too small for the requested data.
    BufferTooSmall = 4,
    /// A panic was caught at the FFI boundary.
    InternalPanic = 5,
}

/// Opaque centered dataset handle.
pub struct HfDataset {
    inner: FunctionalDataset,
}

/// Opaque fitted-model handle.
pub struct HfFit {
    inner: NgbFit,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&ch| ch != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn status_for(e: &Error) -> HfStatus {
    match e {
        Error::InvalidInput(_) | Error::CsvFormat { .. } | Error::Io { .. } | Error::Json(_) => {
            HfStatus::InvalidInput
        }
        Error::SingularSystem(_) | Error::NonConvergence { .. } | Error::AllFitsFailed { .. } => {
            HfStatus::NumericalFailure
        }
    }
}

fn guard<T>(f: impl FnOnce() -> Result<T, HfStatus>) -> Result<T, HfStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(_) => {
            set_last_error("internal panic");
            Err(HfStatus::InternalPanic)
        }
    }
}

/// Copies the most recent error message on this thread into `buf`
/// (NUL-terminated, truncated to `cap` bytes) and returns the full
/// message length in bytes excluding the terminator. `buf` may be null
/// to query the length alone.
#[no_mangle]
pub unsafe extern "C" fn hf_last_error_message(buf: *mut c_char, cap: size_t) -> size_t {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a centered dataset from row-major curve samples.
///
/// `grid` holds `n_points` strictly increasing times starting at 0;
/// `curves` holds `n * n_points` values, one curve per row; `responses`
/// holds `n` scalars. Returns null on error (see `hf_last_error_message`).
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_new(
    grid: *const f64,
    n_points: size_t,
    curves: *const f64,
    n: size_t,
    responses: *const f64,
) -> *mut HfDataset {
    let result = guard(|| {
        if grid.is_null() || curves.is_null() || responses.is_null() {
            set_last_error("null pointer argument");
            return Err(HfStatus::NullArgument);
        }
        let grid = std::slice::from_raw_parts(grid, n_points).to_vec();
        let curves_flat = std::slice::from_raw_parts(curves, n * n_points);
        let curves = DMatrix::from_fn(n, n_points, |i, j| curves_flat[i * n_points + j]);
        let responses = DVector::from_column_slice(std::slice::from_raw_parts(responses, n));
        let data = FunctionalDataset::new(grid, curves, responses).map_err(|e| {
            set_last_error(&e.to_string());
            status_for(&e)
        })?;
        center(&data).map_err(|e| {
            set_last_error(&e.to_string());
            status_for(&e)
        })
    });
    match result {
        Ok(data) => Box::into_raw(Box::new(HfDataset { inner: data })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Releases a dataset handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_free(dataset: *mut HfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of curves in the dataset.
#[no_mangle]
pub unsafe extern "C" fn hf_dataset_len(dataset: *const HfDataset) -> size_t {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.n()
}

/// Fits the model by BIC search over the given tuning grids and returns
/// an owned fit handle, or null on error.
///
/// `basis_intervals`, `degree`, and `m` shape the spline basis and the
/// roughness penalty; `gamma` is the bridge exponent in (0,1).
#[no_mangle]
pub unsafe extern "C" fn hf_fit_new(
    dataset: *const HfDataset,
    basis_intervals: size_t,
    degree: size_t,
    m: size_t,
    gamma: f64,
    kappa_grid: *const f64,
    kappa_len: size_t,
    lambda_grid: *const f64,
    lambda_len: size_t,
) -> *mut HfFit {
    let result = guard(|| {
        if dataset.is_null() || kappa_grid.is_null() || lambda_grid.is_null() {
            set_last_error("null pointer argument");
            return Err(HfStatus::NullArgument);
        }
        let data = &(*dataset).inner;
        let kappas = std::slice::from_raw_parts(kappa_grid, kappa_len);
        let lambdas = std::slice::from_raw_parts(lambda_grid, lambda_len);
        let run = || -> histfun::Result<NgbFit> {
            let basis = make_basis(data.domain_end(), basis_intervals, degree)?;
            let ds = DesignSystem::new(data, basis, m)?;
            let mut config = NgbConfig::new(0.0, 0.0);
            config.gamma = gamma;
            config.m = m;
            tune_fit(&ds, data.responses(), kappas, lambdas, &config)
        };
        run().map_err(|e| {
            set_last_error(&e.to_string());
            status_for(&e)
        })
    });
    match result {
        Ok(fit) => Box::into_raw(Box::new(HfFit { inner: fit })),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Releases a fit handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_free(fit: *mut HfFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Estimated history length (a knot of the fitting basis); NaN if `fit`
/// is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_delta_hat(fit: *const HfFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    (*fit).inner.delta_hat
}

/// 1-based cutoff index; 0 if `fit` is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_j0(fit: *const HfFit) -> size_t {
    if fit.is_null() {
        return 0;
    }
    (*fit).inner.j0
}

/// Selected roughness penalty level; NaN if `fit` is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_kappa(fit: *const HfFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    (*fit).inner.kappa()
}

/// Selected sparsity penalty level; NaN if `fit` is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_lambda(fit: *const HfFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    (*fit).inner.lambda()
}

/// BIC of the selected fit; NaN if `fit` is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_bic(fit: *const HfFit) -> f64 {
    if fit.is_null() {
        return f64::NAN;
    }
    (*fit).inner.bic
}

/// Number of spline coefficients; 0 if `fit` is null.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_coefficient_count(fit: *const HfFit) -> size_t {
    if fit.is_null() {
        return 0;
    }
    (*fit).inner.b_hat.len()
}

/// Copies the spline coefficients into `out` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn hf_fit_coefficients(
    fit: *const HfFit,
    out: *mut f64,
    cap: size_t,
) -> HfStatus {
    let result = guard(|| {
        if fit.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return Err(HfStatus::NullArgument);
        }
        let b = &(*fit).inner.b_hat;
        if cap < b.len() {
            set_last_error("coefficient buffer too small");
            return Err(HfStatus::BufferTooSmall);
        }
        std::ptr::copy_nonoverlapping(b.as_slice().as_ptr(), out, b.len());
        Ok(())
    });
    match result {
        Ok(()) => HfStatus::Ok,
        Err(status) => status,
    }
}

/// Evaluates the fitted coefficient function at `t`, writing to `out`.
#[no_mangle]
pub unsafe extern "C" fn hf_fit_eval(fit: *const HfFit, t: f64, out: *mut f64) -> HfStatus {
    let result = guard(|| {
        if fit.is_null() || out.is_null() {
            set_last_error("null pointer argument");
            return Err(HfStatus::NullArgument);
        }
        let value = eval_spline(&(*fit).inner.beta_hat, t).map_err(|e| {
            set_last_error(&e.to_string());
            status_for(&e)
        })?;
        *out = value;
        Ok(())
    });
    match result {
        Ok(()) => HfStatus::Ok,
        Err(status) => status,
    }
}

/// Residual-bootstrap pointwise band around the fit at its own tuning
/// values: `b_count` refits (at least 100) at confidence `level`,
/// evaluated at `grid_len` times, RNG streams derived from `seed`.
/// `lower` and `upper` must each hold `grid_len` values.
#[no_mangle]
pub unsafe extern "C" fn hf_bootstrap_band(
    dataset: *const HfDataset,
    fit: *const HfFit,
    b_count: size_t,
    level: f64,
    grid: *const f64,
    grid_len: size_t,
    seed: u64,
    lower: *mut f64,
    upper: *mut f64,
) -> HfStatus {
    let result = guard(|| {
        if dataset.is_null() || fit.is_null() || grid.is_null() || lower.is_null() || upper.is_null()
        {
            set_last_error("null pointer argument");
            return Err(HfStatus::NullArgument);
        }
        if !(level > 0.0 && level < 1.0) {
            set_last_error("level must lie in (0,1)");
            return Err(HfStatus::InvalidInput);
        }
        let times = std::slice::from_raw_parts(grid, grid_len);
        let band = bootstrap_band(
            &(*dataset).inner,
            &(*fit).inner,
            b_count,
            1.0 - level,
            times,
            seed,
        )
        .map_err(|e| {
            set_last_error(&e.to_string());
            status_for(&e)
        })?;
        std::ptr::copy_nonoverlapping(band.lower.as_ptr(), lower, grid_len);
        std::ptr::copy_nonoverlapping(band.upper.as_ptr(), upper, grid_len);
        Ok(())
    });
    match result {
        Ok(()) => HfStatus::Ok,
        Err(status) => status,
    }
}
