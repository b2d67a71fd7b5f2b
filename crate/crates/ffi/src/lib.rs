//! C ABI for the logode solver.
//!
//! The interface follows the usual opaque-handle pattern: build a
//! [`LogodeProblem`] (a registered example or a CSV driver with a named
//! field), solve it with [`logode_solve`] under [`LogodeOptions`], then query
//! the returned [`LogodeRun`]. Functions that can fail return null (or a
//! non-zero [`LogodeStatus`]) and store a message retrievable with
//! [`logode_last_error`]. Strings returned by this library are freed with
//! [`logode_string_free`]; handles with their `_free` functions.

use logode::adaptive::{AdaptiveSettings, Algorithm, DEGREE_CAP};
use logode::path::path_from_csv;
use logode::problems::{build_custom_problem, build_example_problem, Problem, ProblemOptions};
use logode::report::{execute_run, to_json_17, RunReport, RunSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).ok();
    });
}

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum LogodeStatus {
    Ok = 0,
    InvalidArgument = 1,
    SolveFailed = 2,
}

/// Opaque problem handle: driver path, vector field, payoff and defaults.
pub struct LogodeProblem {
    inner: Problem,
    seed: u64,
    horizon: Option<f64>,
}

/// Opaque run handle: the report of one adaptive solve.
pub struct LogodeRun {
    report: RunReport,
}

/// Solver options; obtain defaults from [`logode_options_default`].
/// Non-positive tolerances or `p` select the problem's own defaults;
/// non-positive `ode_tol` selects the automatic per-round inner tolerance.
#[repr(C)]
pub struct LogodeOptions {
    /// 0 = er-predicting, 1 = er-testing, 2 = simple-first, 3 = simple-full.
    pub algorithm: u32,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub p: f64,
    pub ode_tol: f64,
    pub max_degree: u32,
    pub subdivisions: u32,
    pub initial_intervals: u32,
    pub max_rounds: u32,
    pub full_error: bool,
}

/// The default solver options.
#[no_mangle]
pub extern "C" fn logode_options_default() -> LogodeOptions {
    LogodeOptions {
        algorithm: 0,
        tol_abs: 0.0,
        tol_rel: 0.0,
        p: 0.0,
        ode_tol: 0.0,
        max_degree: DEGREE_CAP as u32,
        subdivisions: 8,
        initial_intervals: 8,
        max_rounds: 30,
        full_error: false,
    }
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ()> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(());
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
    })
}

/// Builds a registered example problem (`spike-path`, `spike-field`,
/// `changing-roughness`, `langevin`). Returns null on error.
///
/// # Safety
/// `name` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn logode_problem_example(
    name: *const c_char,
    seed: u64,
    horizon: f64,
) -> *mut LogodeProblem {
    let Ok(name) = cstr(name, "example name") else {
        return std::ptr::null_mut();
    };
    let opts = ProblemOptions {
        seed,
        horizon: if horizon > 0.0 { horizon } else { 10.0 },
        full_scale: false,
    };
    match build_example_problem(name, &opts) {
        Ok(inner) => Box::into_raw(Box::new(LogodeProblem {
            inner,
            seed,
            horizon: (name == "langevin").then_some(opts.horizon),
        })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Builds a problem from a driver in the path CSV format (`t,x1,…,xd`) and a
/// registered field name; `y0` may be null for a zero initial value.
/// Returns null on error.
///
/// # Safety
/// `csv_text` and `field_name` must be valid NUL-terminated strings; when
/// `y0` is non-null it must point to `y0_len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn logode_problem_from_csv(
    csv_text: *const c_char,
    field_name: *const c_char,
    y0: *const f64,
    y0_len: usize,
) -> *mut LogodeProblem {
    let (Ok(text), Ok(field)) = (cstr(csv_text, "csv text"), cstr(field_name, "field name"))
    else {
        return std::ptr::null_mut();
    };
    let path = match path_from_csv(text) {
        Ok(p) => p,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    let y0 = if y0.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(y0, y0_len).to_vec())
    };
    match build_custom_problem(path, field, y0) {
        Ok(inner) => Box::into_raw(Box::new(LogodeProblem {
            inner,
            seed: 0,
            horizon: None,
        })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `problem` must come from a `logode_problem_*` constructor and not have
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn logode_problem_free(problem: *mut LogodeProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs the adaptive solver. Returns null on error (see
/// [`logode_last_error`]); an unconverged run is still returned, with
/// `logode_run_converged` false.
///
/// # Safety
/// `problem` must be a live problem handle; `options` may be null for
/// defaults.
#[no_mangle]
pub unsafe extern "C" fn logode_solve(
    problem: *const LogodeProblem,
    options: *const LogodeOptions,
) -> *mut LogodeRun {
    if problem.is_null() {
        set_error("problem is null".into());
        return std::ptr::null_mut();
    }
    let problem = &*problem;
    let defaults = logode_options_default();
    let o = if options.is_null() { &defaults } else { &*options };
    let algorithm = match o.algorithm {
        0 => Algorithm::ErPredicting,
        1 => Algorithm::ErTesting,
        2 => Algorithm::SimpleFirst,
        3 => Algorithm::SimpleFull,
        other => {
            set_error(format!("unknown algorithm code {other}"));
            return std::ptr::null_mut();
        }
    };
    let settings = AdaptiveSettings {
        algorithm,
        tol_abs: if o.tol_abs > 0.0 { o.tol_abs } else { problem.inner.tol_abs },
        tol_rel: if o.tol_rel > 0.0 { o.tol_rel } else { problem.inner.tol_rel },
        p: if o.p > 0.0 { o.p } else { problem.inner.p },
        max_degree: (o.max_degree as usize).clamp(1, DEGREE_CAP),
        subdivisions: (o.subdivisions as usize).max(2),
        initial_intervals: (o.initial_intervals as usize).max(1),
        max_rounds: (o.max_rounds as usize).max(1),
        ode_tol_scale: 0.01,
        ode_tol_override: (o.ode_tol > 0.0).then_some(o.ode_tol),
    };
    let spec = RunSpec {
        settings,
        full_error: o.full_error,
        want_reference: false,
        seed: problem.seed,
        horizon: problem.horizon,
    };
    match execute_run(&problem.inner, &spec, None) {
        Ok((report, _)) => Box::into_raw(Box::new(LogodeRun { report })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `run` must come from [`logode_solve`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn logode_run_free(run: *mut LogodeRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn logode_run_converged(run: *const LogodeRun) -> bool {
    (*run).report.converged
}

/// Magnitude of the a-posteriori error estimate (NaN for the simple
/// variants, which do not compute it).
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn logode_run_estimate(run: *const LogodeRun) -> f64 {
    (*run).report.estimated_error_norm.unwrap_or(f64::NAN)
}

/// Number of intervals in the final partition.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn logode_run_intervals(run: *const LogodeRun) -> usize {
    (*run).report.n_intervals
}

/// Dimension of the payoff vector.
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn logode_run_payoff_len(run: *const LogodeRun) -> usize {
    (*run).report.payoff.len()
}

/// Copies the terminal payoff `g(ȳ_T)` into `out`.
///
/// # Safety
/// `run` must be a live run handle and `out` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn logode_run_payoff(
    run: *const LogodeRun,
    out: *mut f64,
    len: usize,
) -> LogodeStatus {
    let payoff = &(*run).report.payoff;
    if out.is_null() || len < payoff.len() {
        set_error(format!("payoff buffer needs {} doubles", payoff.len()));
        return LogodeStatus::InvalidArgument;
    }
    std::slice::from_raw_parts_mut(out, payoff.len()).copy_from_slice(payoff);
    LogodeStatus::Ok
}

/// The full run report as JSON (17-significant-digit floats); free with
/// [`logode_string_free`].
///
/// # Safety
/// `run` must be a live run handle.
#[no_mangle]
pub unsafe extern "C" fn logode_run_summary_json(run: *const LogodeRun) -> *mut c_char {
    let json = to_json_17(&(*run).report);
    CString::new(json).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// The message of the most recent error on this thread; free with
/// [`logode_string_free`]. Null when no error has occurred.
#[no_mangle]
pub extern "C" fn logode_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null_mut(), |msg| msg.clone().into_raw())
    })
}

/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn logode_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
