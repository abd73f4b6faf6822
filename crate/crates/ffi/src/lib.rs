//! C ABI over the `swcert` crate.
//!
//! Objects cross the boundary as opaque pointers created by a constructor
//! and released by the matching `_free` function. Every fallible call
//! returns a [`SwcertStatus`]; on failure a description is available from
//! [`swcert_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as [`SwcertStatus::Panic`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use swcert::certify;
use swcert::config::{load_system, ncs_example, SystemConfig};
use swcert::experiment::{certify_run, CertifyOutcome, CertifyRequest, Mode, RunError};
use swcert::policy::Tolerances;
use swcert::specfun;
use swcert::system::SwitchedSystem;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwcertStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Sampling = 4,
    Solver = 5,
    Certify = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwcertMode {
    Hybrid = 0,
    Continuous = 1,
}

/// Opaque switching system.
pub struct SwcertSystem {
    inner: SwitchedSystem,
}

/// Opaque result of one sampled certification.
pub struct SwcertReport {
    inner: CertifyOutcome,
}

/// Scalar summary of a report.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SwcertBounds {
    pub lambda_star: f64,
    pub c_star: f64,
    pub epsilon: f64,
    /// `INFINITY` when vacuous.
    pub rho_primary: f64,
    pub rho_alternative: f64,
    pub rho_final: f64,
    pub vacuous: bool,
    pub certifies_stability: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(SwcertStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(SwcertStatus::NullPointer, format!("`{what}` is null"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure(SwcertStatus::InvalidArgument, message.into())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::BaselineMode => SwcertStatus::InvalidArgument,
            RunError::Sampling(_) => SwcertStatus::Sampling,
            RunError::Solver(_) => SwcertStatus::Solver,
            RunError::Certify(_) => SwcertStatus::Certify,
        };
        Failure(status, e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SwcertStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SwcertStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            SwcertStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| Failure::null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    unsafe { out.write(value) };
    Ok(())
}

fn boxed_system(out: *mut *mut SwcertSystem, inner: SwitchedSystem) -> Result<(), Failure> {
    let raw = Box::into_raw(Box::new(SwcertSystem { inner }));
    unsafe { write(out, raw, "out") }.inspect_err(|_| drop(unsafe { Box::from_raw(raw) }))
}

/// Description of the last failure on this thread, or null. The string
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn swcert_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn swcert_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The built-in networked control example.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_ncs(out: *mut *mut SwcertSystem) -> SwcertStatus {
    guard(|| boxed_system(out, ncs_example()))
}

/// Parses a JSON system description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for one pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_from_json(json: *const c_char, out: *mut *mut SwcertSystem) -> SwcertStatus {
    guard(|| {
        let json = unsafe { text(json, "json") }?;
        let sys = SystemConfig::from_json(json)
            .and_then(|c| c.to_system())
            .map_err(|e| Failure(SwcertStatus::Config, e.to_string()))?;
        boxed_system(out, sys)
    })
}

/// Reads a JSON system description from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_load(path: *const c_char, out: *mut *mut SwcertSystem) -> SwcertStatus {
    guard(|| {
        let path = unsafe { text(path, "path") }?;
        let sys = load_system(Path::new(path)).map_err(|e| Failure(SwcertStatus::Config, e.to_string()))?;
        boxed_system(out, sys)
    })
}

/// # Safety
/// `sys` must be null or a pointer obtained from this library that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_free(sys: *mut SwcertSystem) {
    if !sys.is_null() {
        drop(unsafe { Box::from_raw(sys) });
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_dimension(sys: *const SwcertSystem) -> usize {
    unsafe { sys.as_ref() }.map_or(0, |s| s.inner.dim())
}

/// Number of graph nodes, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_node_count(sys: *const SwcertSystem) -> usize {
    unsafe { sys.as_ref() }.map_or(0, |s| s.inner.graph().node_count())
}

/// Number of labels (matrices), or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swcert_system_label_count(sys: *const SwcertSystem) -> usize {
    unsafe { sys.as_ref() }.map_or(0, |s| s.inner.graph().label_count())
}

/// Draws `samples` observations of horizon `horizon`, solves the sampled
/// program and bounds the rate with confidence `1 - beta`. `mode` is a
/// [`SwcertMode`] value.
///
/// # Safety
/// `sys` must be a live handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn swcert_certify(
    sys: *const SwcertSystem,
    mode: u32,
    horizon: usize,
    samples: usize,
    noise_radius: f64,
    beta: f64,
    seed: u64,
    out: *mut *mut SwcertReport,
) -> SwcertStatus {
    guard(|| {
        let sys = unsafe { deref(sys, "sys") }?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Failure::invalid("beta must lie in (0, 1)"));
        }
        let mode = match mode {
            m if m == SwcertMode::Hybrid as u32 => Mode::Hybrid,
            m if m == SwcertMode::Continuous as u32 => Mode::Continuous,
            other => return Err(Failure::invalid(format!("unknown mode {other}"))),
        };
        let req = CertifyRequest {
            mode,
            horizon,
            samples,
            noise_radius,
            beta,
            seed,
        };
        let inner = certify_run(&sys.inner, &req, &Tolerances::default())?;
        unsafe { write(out, Box::into_raw(Box::new(SwcertReport { inner })), "out") }
    })
}

/// # Safety
/// `report` must be null or a pointer obtained from this library that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn swcert_report_free(report: *mut SwcertReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Copies the scalar results of `report` into `out`.
///
/// # Safety
/// `report` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn swcert_report_bounds(report: *const SwcertReport, out: *mut SwcertBounds) -> SwcertStatus {
    guard(|| {
        let outcome = &unsafe { deref(report, "report") }?.inner;
        let r = &outcome.report;
        let bounds = SwcertBounds {
            lambda_star: r.lambda_star,
            c_star: outcome.solution.c_star,
            epsilon: r.epsilon,
            rho_primary: r.rho_primary,
            rho_alternative: r.rho_alternative,
            rho_final: r.rho_final,
            vacuous: r.vacuous,
            certifies_stability: r.certifies_stability,
        };
        unsafe { write(out, bounds, "out") }
    })
}

/// Number of Lyapunov matrices in `report` (graph nodes in hybrid mode, one
/// in continuous mode), or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swcert_report_matrix_count(report: *const SwcertReport) -> usize {
    unsafe { report.as_ref() }.map_or(0, |r| r.inner.solution.p_star.len())
}

/// Writes Lyapunov matrix `index` row-major into `buffer`, which must hold
/// at least `n * n` values.
///
/// # Safety
/// `report` must be a live handle and `buffer` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn swcert_report_matrix(
    report: *const SwcertReport,
    index: usize,
    buffer: *mut f64,
    len: usize,
) -> SwcertStatus {
    guard(|| {
        let outcome = &unsafe { deref(report, "report") }?.inner;
        let p = outcome
            .solution
            .p_star
            .get(index)
            .ok_or_else(|| Failure::invalid(format!("matrix index {index} out of range")))?;
        let n = p.order();
        if buffer.is_null() {
            return Err(Failure::null("buffer"));
        }
        if len < n * n {
            return Err(Failure::invalid(format!("buffer holds {len} values, need {}", n * n)));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(buffer, n * n) };
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = p.get(i, j);
            }
        }
        Ok(())
    })
}

/// Largest `ρ(A_w)^{1/|w|}` over closed walks of length at most `max_len`.
///
/// # Safety
/// `sys` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn swcert_cycle_lower(sys: *const SwcertSystem, max_len: usize, out: *mut f64) -> SwcertStatus {
    guard(|| {
        let sys = unsafe { deref(sys, "sys") }?;
        let v = certify::cycle_lower(&sys.inner, max_len).map_err(|e| Failure(SwcertStatus::Certify, e.to_string()))?;
        unsafe { write(out, v, "out") }
    })
}

/// Model-based quadratic upper bound on the `horizon`-lift, per step.
///
/// # Safety
/// `sys` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn swcert_whitebox_upper(
    sys: *const SwcertSystem,
    horizon: usize,
    gamma_tol: f64,
    out: *mut f64,
) -> SwcertStatus {
    guard(|| {
        let sys = unsafe { deref(sys, "sys") }?;
        if !(gamma_tol > 0.0) {
            return Err(Failure::invalid("gamma_tol must be positive"));
        }
        let tol = Tolerances {
            gamma_tol,
            ..Tolerances::default()
        };
        let bound =
            certify::whitebox_upper(&sys.inner, horizon, &tol).map_err(|e| Failure(SwcertStatus::Certify, e.to_string()))?;
        unsafe { write(out, bound.gamma, "out") }
    })
}

/// Violation level `ε(β, N)` for a program with `dimension` decision
/// variables.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn swcert_epsilon(beta: f64, samples: usize, dimension: usize, out: *mut f64) -> SwcertStatus {
    guard(|| {
        let v = specfun::epsilon(beta, samples, dimension).map_err(|e| Failure::invalid(e.to_string()))?;
        unsafe { write(out, v, "out") }
    })
}

/// Angle factor `δ(x)` in dimension `n`; `InvalidArgument` when the bound
/// is vacuous at `x`.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn swcert_delta(x: f64, n: usize, out: *mut f64) -> SwcertStatus {
    guard(|| {
        let v = specfun::delta(x, n).ok_or_else(|| Failure::invalid(format!("delta is vacuous at x = {x}")))?;
        unsafe { write(out, v, "out") }
    })
}
