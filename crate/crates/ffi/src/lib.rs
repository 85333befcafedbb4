//! C ABI over the geotrans solver.
//!
//! Instances and solutions are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns a
//! [`GtStatus`]; the message for the last failure on the calling thread is
//! available from [`gt_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geotrans::instance::{parse_instance, DEFAULT_BALANCE_TOLERANCE};
use geotrans::oracle::exact_transport;
use geotrans::{solve_instance, Backend, Error, SolverConfig, TransportInstance, TransportationMap};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Unbalanced = 3,
    TooLarge = 4,
    OutOfRange = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtBackend {
    Exact = 0,
    Sherman = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GtConfig {
    pub epsilon: f64,
    pub seed: u64,
    pub backend: GtBackend,
    /// Number of shifted trees; 0 picks the default.
    pub repetitions: usize,
    /// Inner iteration cap; 0 picks the default.
    pub max_iterations: usize,
}

/// Opaque instance handle.
pub struct GtInstance {
    inner: TransportInstance,
}

/// Opaque solution handle.
pub struct GtSolution {
    map: TransportationMap,
    cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GtStatus {
    match e {
        Error::Unbalanced { .. } => GtStatus::Unbalanced,
        Error::TooLarge { .. } => GtStatus::TooLarge,
        Error::IndexOutOfRange { .. } => GtStatus::OutOfRange,
        e if e.is_internal() => GtStatus::Internal,
        _ => GtStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), GtStatus>) -> GtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GtStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside geotrans".into());
            GtStatus::Panic
        }
    }
}

fn fail(e: Error) -> GtStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> GtStatus {
    set_error(format!("null pointer: {what}"));
    GtStatus::NullPointer
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn gt_config_default() -> GtConfig {
    let d = SolverConfig::default();
    GtConfig { epsilon: d.epsilon, seed: d.seed, backend: GtBackend::Exact, repetitions: 0, max_iterations: 0 }
}

/// Builds an instance from `n * d` row-major coordinates and `n` supplies.
///
/// # Safety
/// `coords` must point to `n * d` doubles and `supplies` to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn gt_instance_new(
    d: usize,
    n: usize,
    coords: *const f64,
    supplies: *const f64,
    out: *mut *mut GtInstance,
) -> GtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if coords.is_null() || supplies.is_null() {
            return Err(null("coords or supplies"));
        }
        let len = n.checked_mul(d).ok_or_else(|| fail(Error::InvalidParameter("size overflow".into())))?;
        let c = std::slice::from_raw_parts(coords, len).to_vec();
        let s = std::slice::from_raw_parts(supplies, n).to_vec();
        let inner = TransportInstance::from_flat(d, c, s, DEFAULT_BALANCE_TOLERANCE).map_err(fail)?;
        *out = Box::into_raw(Box::new(GtInstance { inner }));
        Ok(())
    })
}

/// Parses the text instance format.
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gt_instance_parse(text: *const c_char, out: *mut *mut GtInstance) -> GtStatus {
    guard(|| {
        if out.is_null() || text.is_null() {
            return Err(null("text or out"));
        }
        let s = CStr::from_ptr(text).to_str().map_err(|_| fail(Error::InvalidParameter("text is not UTF-8".into())))?;
        let inner = parse_instance(s, DEFAULT_BALANCE_TOLERANCE).map_err(fail)?;
        *out = Box::into_raw(Box::new(GtInstance { inner }));
        Ok(())
    })
}

/// # Safety
/// `instance` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gt_instance_free(instance: *mut GtInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// # Safety
/// `instance` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gt_instance_len(instance: *const GtInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.inner.len())
}

/// # Safety
/// `instance` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gt_instance_dim(instance: *const GtInstance) -> usize {
    instance.as_ref().map_or(0, |i| i.inner.dim())
}

/// Runs the approximation pipeline. A null `config` uses the defaults.
///
/// # Safety
/// `instance` must be a live handle; `config` null or valid.
#[no_mangle]
pub unsafe extern "C" fn gt_solve(
    instance: *const GtInstance,
    config: *const GtConfig,
    out: *mut *mut GtSolution,
) -> GtStatus {
    guard(|| {
        let inst = instance.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = config.as_ref().copied().unwrap_or_else(|| gt_config_default());
        let cfg = SolverConfig {
            epsilon: c.epsilon,
            seed: c.seed,
            backend: match c.backend {
                GtBackend::Exact => Backend::Exact,
                GtBackend::Sherman => Backend::Sherman,
            },
            repetitions: (c.repetitions > 0).then_some(c.repetitions),
            max_iterations: (c.max_iterations > 0).then_some(c.max_iterations),
            ..Default::default()
        };
        let sol = solve_instance(&inst.inner, &cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(GtSolution { map: sol.map, cost: sol.cost }));
        Ok(())
    })
}

/// Exact optimum on the complete bipartite graph (small instances only).
///
/// # Safety
/// `instance` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gt_solve_exact(instance: *const GtInstance, out: *mut *mut GtSolution) -> GtStatus {
    guard(|| {
        let inst = instance.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = exact_transport(&inst.inner).map_err(fail)?;
        *out = Box::into_raw(Box::new(GtSolution { map: r.map, cost: r.cost }));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gt_solution_free(solution: *mut GtSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gt_solution_cost(solution: *const GtSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.cost)
}

/// # Safety
/// `solution` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gt_solution_len(solution: *const GtSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.map.len())
}

/// Reads map entry `index`: mass `amount` moves from point `src` to `dst`.
///
/// # Safety
/// `solution` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gt_solution_entry(
    solution: *const GtSolution,
    index: usize,
    src: *mut usize,
    dst: *mut usize,
    amount: *mut f64,
) -> GtStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if src.is_null() || dst.is_null() || amount.is_null() {
            return Err(null("output"));
        }
        let e = s.map.entries.get(index).ok_or_else(|| fail(Error::IndexOutOfRange { index, len: s.map.len() }))?;
        *src = e.src;
        *dst = e.dst;
        *amount = e.amount;
        Ok(())
    })
}
