//! C ABI over the `peanosphere` library.
//!
//! Every function returns a [`PmcStatus`]; results come back through out
//! pointers. Handles are opaque and must be released with their `_free`
//! function. On failure, [`pmc_last_error_message`] describes the error for
//! the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use peanosphere::cone;
use peanosphere::experiment::{run_named, Outcome};
use peanosphere::gmc::{BoundaryGrid, FieldModel, SamplerKind};
use peanosphere::rng::{tags, RandomStream};
use peanosphere::stats::Verdict;
use peanosphere::stochastic;
use peanosphere::Error;

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Numerical = 3,
    Panic = 4,
    Config = 5,
    Io = 6,
}

/// Verdict of an experiment report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmcVerdict {
    Pass = 0,
    Fail = 1,
    Inconclusive = 2,
}

/// Sampler of the boundary field covariance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmcSampler {
    RadialLateral = 0,
    Dense = 1,
}

/// Opaque boundary-field model.
pub struct PmcFieldModel {
    inner: FieldModel,
}

/// Opaque experiment outcome.
pub struct PmcReport {
    outcome: Outcome,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PmcStatus {
    match e {
        Error::Parameter { .. } => PmcStatus::InvalidParameter,
        Error::Config(_) => PmcStatus::Config,
        Error::Io(_) => PmcStatus::Io,
        _ => PmcStatus::Numerical,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (PmcStatus, String)>) -> PmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmcStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PmcStatus::Panic
        }
    }
}

fn lib<T>(r: peanosphere::Result<T>) -> Result<T, (PmcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (PmcStatus, String) {
    (PmcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PmcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PmcStatus::InvalidParameter, format!("`{what}` is not UTF-8")))
}

fn out<T>(p: *mut T, what: &str, v: T) -> Result<(), (PmcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and supplied by the caller as writable.
    unsafe { p.write(v) };
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn pmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `c = −cos(4π/κ′)` for `κ′ > 4`.
#[no_mangle]
pub extern "C" fn pmc_correlation_from_kappa(kappa: f64, out_c: *mut f64) -> PmcStatus {
    guard(|| out(out_c, "out_c", lib(cone::correlation_from_kappa(kappa))?))
}

/// Cone exponent `π / arccos(c)`.
#[no_mangle]
pub extern "C" fn pmc_sigma_from_correlation(c: f64, out_sigma: *mut f64) -> PmcStatus {
    guard(|| out(out_sigma, "out_sigma", lib(cone::sigma_from_correlation(c))?))
}

/// Closed form of the hitting-time Laplace transform.
#[no_mangle]
pub extern "C" fn pmc_laplace_theory(a: f64, gamma: f64, lambda: f64, delta: f64, out_value: *mut f64) -> PmcStatus {
    guard(|| out(out_value, "out_value", lib(stochastic::laplace_theory(a, gamma, lambda, delta))?))
}

/// Cone probability of an uncorrelated pair, `(2Φ(δ/√t) − 1)²`.
#[no_mangle]
pub extern "C" fn pmc_independent_cone_prob(delta: f64, t: f64, out_p: *mut f64) -> PmcStatus {
    guard(|| {
        if !(delta > 0.0 && t > 0.0) {
            return Err((PmcStatus::InvalidParameter, format!("need delta > 0 and t > 0, got {delta}, {t}")));
        }
        out(out_p, "out_p", cone::independent_cone_prob(delta, t))
    })
}

/// Builds a field model on the geometric grid `r q^k` with `n_side` cells
/// per side.
#[no_mangle]
pub extern "C" fn pmc_field_model_new(r: f64, q: f64, n_side: usize, sampler: PmcSampler, out_model: *mut *mut PmcFieldModel) -> PmcStatus {
    guard(|| {
        if out_model.is_null() {
            return Err(null("out_model"));
        }
        let kind = match sampler {
            PmcSampler::RadialLateral => SamplerKind::RadialLateral,
            PmcSampler::Dense => SamplerKind::Dense,
        };
        let m = lib(BoundaryGrid::new(r, q, n_side).and_then(|g| FieldModel::new(g, kind)))?;
        out(out_model, "out_model", Box::into_raw(Box::new(PmcFieldModel { inner: m })))
    })
}

/// Number of field values per sample (both sides).
#[no_mangle]
pub unsafe extern "C" fn pmc_field_model_dim(model: *const PmcFieldModel, out_dim: *mut usize) -> PmcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        out(out_dim, "out_dim", m.inner.meta().dim)
    })
}

/// Draws field sample `index` of stream `seed` into `buf[0..len]`; `len`
/// must equal the model dimension.
#[no_mangle]
pub unsafe extern "C" fn pmc_field_model_sample(model: *const PmcFieldModel, seed: u64, index: u64, buf: *mut f64, len: usize) -> PmcStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let dim = m.inner.meta().dim;
        if len != dim {
            return Err((PmcStatus::InvalidParameter, format!("buffer length {len} != model dimension {dim}")));
        }
        let mut rng = RandomStream::root(seed).child(tags::FIELD, index).rng();
        let v = m.inner.sample_boundary_field(&mut rng);
        ptr::copy_nonoverlapping(v.as_ptr(), buf, dim);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pmc_field_model_free(model: *mut PmcFieldModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs experiment `name` (a CLI subcommand name) from TOML text, which may
/// be empty for the defaults.
#[no_mangle]
pub unsafe extern "C" fn pmc_run_experiment(name: *const c_char, config_toml: *const c_char, out_report: *mut *mut PmcReport) -> PmcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let text = if config_toml.is_null() { "" } else { str_arg(config_toml, "config_toml")? };
        if out_report.is_null() {
            return Err(null("out_report"));
        }
        let (outcome, _) = lib(run_named(name, text, &[], None))?;
        let json = serde_json::to_string_pretty(&outcome.report).map_err(|e| (PmcStatus::Numerical, e.to_string()))?;
        let json = CString::new(json).map_err(|e| (PmcStatus::Numerical, e.to_string()))?;
        out(out_report, "out_report", Box::into_raw(Box::new(PmcReport { outcome, json })))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pmc_report_verdict(report: *const PmcReport, out_verdict: *mut PmcVerdict) -> PmcStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let v = match r.outcome.report.verdict {
            Verdict::Pass => PmcVerdict::Pass,
            Verdict::Fail => PmcVerdict::Fail,
            Verdict::Inconclusive => PmcVerdict::Inconclusive,
        };
        out(out_verdict, "out_verdict", v)
    })
}

/// JSON report text, owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn pmc_report_json(report: *const PmcReport, out_json: *mut *const c_char) -> PmcStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        out(out_json, "out_json", r.json.as_ptr())
    })
}

/// Writes CSV tables, report and manifest into `dir`.
#[no_mangle]
pub unsafe extern "C" fn pmc_report_write(report: *const PmcReport, dir: *const c_char) -> PmcStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let dir = str_arg(dir, "dir")?;
        lib(r.outcome.write(Path::new(dir), None).map(|_| ()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn pmc_report_free(report: *mut PmcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
