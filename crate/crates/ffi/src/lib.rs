//! C interface to `convdyn`.
//!
//! Teachers, students and run results are opaque heap handles created by a
//! `*_new` or `convdyn_run` call and released with the matching `*_free`.
//! Every fallible function returns a [`ConvdynStatus`]; on failure a message
//! for the calling thread is available from [`convdyn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use convdyn::analytic::{gradients, population_loss};
use convdyn::dynamics::{classify_stationary, run, RunResult};
use convdyn::{Error, ExperimentConfig, StationaryClass, StepSizePolicy, StudentParams, TeacherParams};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvdynStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Domain = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvdynClass {
    Global = 0,
    SpuriousLocal = 1,
    Undetermined = 2,
}

impl From<StationaryClass> for ConvdynClass {
    fn from(c: StationaryClass) -> Self {
        match c {
            StationaryClass::Global => ConvdynClass::Global,
            StationaryClass::SpuriousLocal => ConvdynClass::SpuriousLocal,
            StationaryClass::Undetermined => ConvdynClass::Undetermined,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvdynStepRule {
    /// Step bound of the convergence theorem at the initial point, times
    /// `step_value`.
    Auto = 0,
    /// `step_value · min{1/k, 1/((‖a*‖² + (1ᵀa*)²)‖w*‖²)}`.
    Safe = 1,
    /// `step_value` is the step size.
    Fixed = 2,
}

/// Options for [`convdyn_run`]. Start from [`convdyn_run_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ConvdynRunOptions {
    pub step_rule: ConvdynStepRule,
    /// Scale for `Auto` and `Safe`, step size for `Fixed`.
    pub step_value: f64,
    pub max_iters: u64,
    pub grad_tol: f64,
    pub class_tol: f64,
    /// Stop once the iterate has settled into a stationary family.
    pub stop_when_classified: bool,
    /// Check the monotonicity invariants at every iteration.
    pub monitor: bool,
}

pub struct ConvdynTeacher(TeacherParams);

pub struct ConvdynStudent(StudentParams);

pub struct ConvdynRunResult(RunResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ConvdynStatus, msg: impl Into<String>) -> ConvdynStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> ConvdynStatus {
    let status = match e {
        Error::DimensionMismatch { .. } => ConvdynStatus::DimensionMismatch,
        Error::Domain(_) => ConvdynStatus::Domain,
        _ => ConvdynStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`ConvdynStatus::Panic`].
fn guard(f: impl FnOnce() -> ConvdynStatus) -> ConvdynStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(ConvdynStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], ConvdynStatus> {
    if p.is_null() {
        return Err(fail(ConvdynStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or a live handle created by this library.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ConvdynStatus> {
    p.as_ref()
        .ok_or_else(|| fail(ConvdynStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> ConvdynStatus {
    if out.is_null() {
        return fail(ConvdynStatus::NullPointer, format!("{what} is null"));
    }
    out.write(value);
    ConvdynStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn convdyn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a teacher from `w_star` (length `p`) and `a_star` (length `k`).
///
/// # Safety
/// The arrays must hold `p` and `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_teacher_new(
    w_star: *const f64,
    p: usize,
    a_star: *const f64,
    k: usize,
    out: *mut *mut ConvdynTeacher,
) -> ConvdynStatus {
    guard(|| {
        let w = tri!(slice(w_star, p, "w_star"));
        let a = tri!(slice(a_star, k, "a_star"));
        match TeacherParams::new(w.to_vec(), a.to_vec()) {
            Ok(t) => write_out(out, Box::into_raw(Box::new(ConvdynTeacher(t))), "out"),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `t` must be null or a handle from [`convdyn_teacher_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convdyn_teacher_free(t: *mut ConvdynTeacher) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Creates a student from `v` (length `p`) and `a` (length `k`).
///
/// # Safety
/// The arrays must hold `p` and `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_student_new(
    v: *const f64,
    p: usize,
    a: *const f64,
    k: usize,
    out: *mut *mut ConvdynStudent,
) -> ConvdynStatus {
    guard(|| {
        let v = tri!(slice(v, p, "v"));
        let a = tri!(slice(a, k, "a"));
        match StudentParams::new(v.to_vec(), a.to_vec()) {
            Ok(s) => write_out(out, Box::into_raw(Box::new(ConvdynStudent(s))), "out"),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `s` must be null or a handle from [`convdyn_student_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convdyn_student_free(s: *mut ConvdynStudent) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Closed-form population loss.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_loss(
    s: *const ConvdynStudent,
    t: *const ConvdynTeacher,
    out: *mut f64,
) -> ConvdynStatus {
    guard(|| {
        let s = tri!(handle(s, "student"));
        let t = tri!(handle(t, "teacher"));
        match population_loss(&s.0, &t.0) {
            Ok(l) => write_out(out, l, "out"),
            Err(e) => from_error(e),
        }
    })
}

/// Closed-form gradients with respect to `v` and `a`, written to buffers of
/// length `p` and `k`.
///
/// # Safety
/// Handles must be live; the buffers must hold `p` and `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn convdyn_gradients(
    s: *const ConvdynStudent,
    t: *const ConvdynTeacher,
    grad_v: *mut f64,
    p: usize,
    grad_a: *mut f64,
    k: usize,
) -> ConvdynStatus {
    guard(|| {
        let s = tri!(handle(s, "student"));
        let t = tri!(handle(t, "teacher"));
        if grad_v.is_null() || grad_a.is_null() {
            return fail(ConvdynStatus::NullPointer, "gradient buffer is null");
        }
        if p != s.0.p() || k != s.0.k() {
            return fail(
                ConvdynStatus::DimensionMismatch,
                format!("buffers are ({p}, {k}), student is ({}, {})", s.0.p(), s.0.k()),
            );
        }
        match gradients(&s.0, &t.0) {
            Ok((gv, ga)) => {
                std::slice::from_raw_parts_mut(grad_v, p).copy_from_slice(&gv);
                std::slice::from_raw_parts_mut(grad_a, k).copy_from_slice(&ga);
                ConvdynStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Which stationary family `s` is within `class_tol` of.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_classify(
    s: *const ConvdynStudent,
    t: *const ConvdynTeacher,
    class_tol: f64,
    out: *mut ConvdynClass,
) -> ConvdynStatus {
    guard(|| {
        let s = tri!(handle(s, "student"));
        let t = tri!(handle(t, "teacher"));
        if s.0.p() != t.0.p() || s.0.k() != t.0.k() {
            return fail(
                ConvdynStatus::DimensionMismatch,
                format!("student is ({}, {}), teacher is ({}, {})", s.0.p(), s.0.k(), t.0.p(), t.0.k()),
            );
        }
        if !(class_tol > 0.0) {
            return fail(ConvdynStatus::InvalidArgument, "class_tol must be positive");
        }
        write_out(out, classify_stationary(&s.0, &t.0, class_tol).into(), "out")
    })
}

#[no_mangle]
pub extern "C" fn convdyn_run_options_default() -> ConvdynRunOptions {
    let d = ExperimentConfig::default();
    ConvdynRunOptions {
        step_rule: ConvdynStepRule::Auto,
        step_value: 0.5,
        max_iters: d.max_iters,
        grad_tol: d.grad_tol,
        class_tol: d.class_tol,
        stop_when_classified: false,
        monitor: true,
    }
}

/// Gradient descent from `s0`. Only the final iterate is kept.
///
/// # Safety
/// Handles must be live; `opts` must be null (defaults) or readable; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_run(
    s0: *const ConvdynStudent,
    t: *const ConvdynTeacher,
    opts: *const ConvdynRunOptions,
    out: *mut *mut ConvdynRunResult,
) -> ConvdynStatus {
    guard(|| {
        let s0 = tri!(handle(s0, "student"));
        let t = tri!(handle(t, "teacher"));
        let o = opts.as_ref().copied().unwrap_or_else(|| convdyn_run_options_default());
        let step_size_policy = match o.step_rule {
            ConvdynStepRule::Auto => StepSizePolicy::Auto { scale: o.step_value },
            ConvdynStepRule::Safe => StepSizePolicy::Safe { scale: o.step_value },
            ConvdynStepRule::Fixed => StepSizePolicy::Fixed { eta: o.step_value },
        };
        let k = t.0.k();
        let cfg = ExperimentConfig {
            p: t.0.p(),
            k,
            ratio: t.0.ratio().min(k as f64),
            step_size_policy,
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            class_tol: o.class_tol,
            stride: o.max_iters.max(1),
            stop_when_classified: o.stop_when_classified,
            monitor: o.monitor,
            ..ExperimentConfig::default()
        };
        match run(&s0.0, &t.0, &cfg) {
            Ok(r) => write_out(out, Box::into_raw(Box::new(ConvdynRunResult(r))), "out"),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `r` must be null or a handle from [`convdyn_run`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_free(r: *mut ConvdynRunResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_class(r: *const ConvdynRunResult, out: *mut ConvdynClass) -> ConvdynStatus {
    guard(|| write_out(out, tri!(handle(r, "result")).0.class.into(), "out"))
}

/// # Safety
/// `r` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_iters(r: *const ConvdynRunResult, out: *mut u64) -> ConvdynStatus {
    guard(|| write_out(out, tri!(handle(r, "result")).0.iters_run, "out"))
}

/// Step size the run used.
///
/// # Safety
/// `r` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_eta(r: *const ConvdynRunResult, out: *mut f64) -> ConvdynStatus {
    guard(|| write_out(out, tri!(handle(r, "result")).0.eta, "out"))
}

/// Population loss at the final iterate.
///
/// # Safety
/// `r` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_final_loss(r: *const ConvdynRunResult, out: *mut f64) -> ConvdynStatus {
    guard(|| {
        let r = tri!(handle(r, "result"));
        let last = r.0.trajectory.last().expect("final record kept");
        write_out(out, last.loss, "out")
    })
}

/// Number of invariant violations seen by the monitor.
///
/// # Safety
/// `r` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_violation_count(r: *const ConvdynRunResult, out: *mut u64) -> ConvdynStatus {
    guard(|| write_out(out, tri!(handle(r, "result")).0.violation_count, "out"))
}

/// Copies the final `(v, a)` into buffers of length `p` and `k`.
///
/// # Safety
/// `r` must be live; the buffers must hold `p` and `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn convdyn_result_final_point(
    r: *const ConvdynRunResult,
    v: *mut f64,
    p: usize,
    a: *mut f64,
    k: usize,
) -> ConvdynStatus {
    guard(|| {
        let r = tri!(handle(r, "result"));
        let s = &r.0.final_point;
        if v.is_null() || a.is_null() {
            return fail(ConvdynStatus::NullPointer, "output buffer is null");
        }
        if p != s.p() || k != s.k() {
            return fail(
                ConvdynStatus::DimensionMismatch,
                format!("buffers are ({p}, {k}), point is ({}, {})", s.p(), s.k()),
            );
        }
        std::slice::from_raw_parts_mut(v, p).copy_from_slice(s.v());
        std::slice::from_raw_parts_mut(a, k).copy_from_slice(s.a());
        ConvdynStatus::Ok
    })
}
