//! C ABI over the `ineqsurvey` library.
//!
//! Datasets and estimation reports are opaque handles owned by the caller
//! and released with the matching `*_free` function. Every fallible call
//! returns an [`IsStatus`]; on failure [`is_last_error_message`] describes
//! the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ineqsurvey::censoring::DomainConfig;
use ineqsurvey::data_model::ComponentCount;
use ineqsurvey::gibbs::VarianceMode;
use ineqsurvey::indices::{
    atkinson_weighted, gini_weighted, theil_weighted, weighted_quantile, SummarySpec, WeightedSample,
};
use ineqsurvey::io::{self, LoadedDataset};
use ineqsurvey::pipeline::{self, Estimate, RunOptions};
use ineqsurvey::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Infeasible = 3,
    Runtime = 4,
    HashMismatch = 5,
    Panic = 6,
}

/// A parsed and feasibility-checked dataset.
pub struct IsDataset {
    loaded: LoadedDataset,
    domain: DomainConfig,
}

/// The result of an estimation run.
pub struct IsReport {
    estimate: Estimate,
    labels: Vec<CString>,
}

/// Variance estimator used at each sweep.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsVarianceMode {
    Linearization = 0,
    Jackknife = 1,
    FastApprox = 2,
}

/// Settings of [`is_estimate`]. Obtain defaults from [`is_default_options`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct IsEstimateOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub chains: usize,
    pub alpha: f64,
    pub variance_mode: IsVarianceMode,
    /// 0 keeps the dataset's components; 4 aggregates a 5-component dataset.
    pub components: u32,
}

/// One row of a report.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct IsReportRow {
    pub lower: f64,
    pub prediction: f64,
    pub upper: f64,
    pub sd: f64,
    pub n_used: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> IsStatus {
    if e.is_validation() {
        IsStatus::InvalidInput
    } else if e.is_infeasibility() {
        IsStatus::Infeasible
    } else if matches!(e, Error::HashMismatch(_)) {
        IsStatus::HashMismatch
    } else {
        IsStatus::Runtime
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), (IsStatus, String)>>(f: F) -> IsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (IsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (IsStatus, String) {
    (IsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (IsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (IsStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn sample_arg(values: *const f64, weights: *const f64, n: usize) -> Result<WeightedSample, (IsStatus, String)> {
    if values.is_null() {
        return Err(null("values"));
    }
    let v = std::slice::from_raw_parts(values, n).to_vec();
    let s = if weights.is_null() {
        WeightedSample::unweighted(v)
    } else {
        WeightedSample::new(v, std::slice::from_raw_parts(weights, n).to_vec())
    };
    s.map_err(lib_err)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn is_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn is_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Weighted Gini index. `weights` may be null for equal weights.
///
/// # Safety
/// `values` (and `weights` when non-null) must point to `n` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn is_gini_weighted(
    values: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gini_weighted(&sample_arg(values, weights, n)?).map_err(lib_err)?;
        Ok(())
    })
}

/// Weighted Theil index.
///
/// # Safety
/// As for [`is_gini_weighted`].
#[no_mangle]
pub unsafe extern "C" fn is_theil(values: *const f64, weights: *const f64, n: usize, out: *mut f64) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = theil_weighted(&sample_arg(values, weights, n)?).map_err(lib_err)?;
        Ok(())
    })
}

/// Weighted Atkinson index with inequality aversion `eps > 0`.
///
/// # Safety
/// As for [`is_gini_weighted`].
#[no_mangle]
pub unsafe extern "C" fn is_atkinson(
    values: *const f64,
    weights: *const f64,
    n: usize,
    eps: f64,
    out: *mut f64,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = atkinson_weighted(&sample_arg(values, weights, n)?, eps).map_err(lib_err)?;
        Ok(())
    })
}

/// Left-continuous weighted quantile at level `p` in (0, 1).
///
/// # Safety
/// As for [`is_gini_weighted`].
#[no_mangle]
pub unsafe extern "C" fn is_weighted_quantile(
    values: *const f64,
    weights: *const f64,
    n: usize,
    p: f64,
    out: *mut f64,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = weighted_quantile(&sample_arg(values, weights, n)?, p).map_err(lib_err)?;
        Ok(())
    })
}

/// Parses a dataset file and checks every household's domain. `cap`
/// replaces open bracket uppers; pass 0 for the default.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_load(path: *const c_char, cap: f64, out: *mut *mut IsDataset) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let mut domain = DomainConfig::default();
        if cap > 0.0 {
            domain.cap = cap;
        }
        let loaded = io::ingest(Path::new(path), &domain, None).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(IsDataset { loaded, domain }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from [`is_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_free(ds: *mut IsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of households in a dataset.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_dataset_len(ds: *const IsDataset, out: *mut usize) -> IsStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ds.loaded.dataset.len();
        Ok(())
    })
}

/// Fills `out` with the default estimation settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn is_default_options(out: *mut IsEstimateOptions) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = RunOptions::default();
        *out = IsEstimateOptions {
            iterations: d.iterations,
            burn_in: d.burn_in,
            seed: d.seed,
            chains: d.chains,
            alpha: d.alpha,
            variance_mode: IsVarianceMode::Linearization,
            components: 0,
        };
        Ok(())
    })
}

/// Runs the sampler. `summaries` is a comma-separated list such as
/// `"gini,theil,atkinson:1.5"`, or null for the standard set.
///
/// # Safety
/// `ds` must be a live dataset handle, `options` readable, `summaries`
/// null or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_estimate(
    ds: *const IsDataset,
    options: *const IsEstimateOptions,
    summaries: *const c_char,
    out: *mut *mut IsReport,
) -> IsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        let specs = if summaries.is_null() {
            SummarySpec::default_set()
        } else {
            str_arg(summaries, "summaries")?
                .split(',')
                .map(str::parse)
                .collect::<Result<Vec<SummarySpec>, _>>()
                .map_err(lib_err)?
        };
        let components = match o.components {
            0 => None,
            n => Some(ComponentCount::from_len(n as usize).map_err(lib_err)?),
        };
        let opts = RunOptions {
            iterations: o.iterations,
            burn_in: o.burn_in,
            seed: o.seed,
            chains: o.chains,
            alpha: o.alpha,
            summaries: specs,
            variance_mode: match o.variance_mode {
                IsVarianceMode::Linearization => VarianceMode::Linearization,
                IsVarianceMode::Jackknife => VarianceMode::Jackknife,
                IsVarianceMode::FastApprox => VarianceMode::FastApprox,
            },
            domain: ds.domain,
            components,
            ..RunOptions::default()
        };
        let mut loaded = ds.loaded.clone();
        if let Some(ComponentCount::Four) = components {
            if loaded.dataset.components == ComponentCount::Five {
                loaded.dataset = loaded.dataset.aggregate_real_estate().map_err(lib_err)?;
            }
        }
        let estimate = pipeline::estimate(&loaded, &opts).map_err(lib_err)?;
        let labels = estimate
            .report
            .rows
            .iter()
            .map(|r| CString::new(r.label.clone()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(IsReport { estimate, labels }));
        Ok(())
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from [`is_estimate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn is_report_free(report: *mut IsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of rows (summaries) in a report.
///
/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_report_len(report: *const IsReport, out: *mut usize) -> IsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = r.estimate.report.rows.len();
        Ok(())
    })
}

/// Bounds, prediction and spread of row `i`.
///
/// # Safety
/// `report` must be a live report handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn is_report_row(report: *const IsReport, i: usize, out: *mut IsReportRow) -> IsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let row = r
            .estimate
            .report
            .rows
            .get(i)
            .ok_or_else(|| (IsStatus::InvalidInput, format!("row {i} out of range")))?;
        *out = IsReportRow {
            lower: row.lower,
            prediction: row.prediction,
            upper: row.upper,
            sd: row.sd,
            n_used: row.n_used,
        };
        Ok(())
    })
}

/// Label of row `i` (owned by the report), or null when out of range.
///
/// # Safety
/// `report` must be a live report handle.
#[no_mangle]
pub unsafe extern "C" fn is_report_label(report: *const IsReport, i: usize) -> *const c_char {
    match report.as_ref().and_then(|r| r.labels.get(i)) {
        Some(l) => l.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Writes the report, sweep log, running means and manifest into `dir`.
///
/// # Safety
/// `report` must be a live report handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn is_report_write(report: *const IsReport, dir: *const c_char) -> IsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let dir = str_arg(dir, "dir")?;
        pipeline::write_run(Path::new(dir), &r.estimate, io::unix_now()).map_err(lib_err)?;
        Ok(())
    })
}
