//! C interface to the simulator.
//!
//! Scenarios and runs are opaque handles owned by the caller and released
//! with the matching `_free` function. Every call returns a [`LachesisStatus`];
//! on failure `lachesis_last_error` describes what went wrong on this thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lachesis_core::cli::{verify_transcripts, Verdict};
use lachesis_core::simnet::{self, Fault, RunOutput, Scenario, MILLI};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LachesisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    OutOfRange = 4,
    Io = 5,
    /// The buffer was too small; the required size was still reported.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque scenario handle.
pub struct LachesisScenario(Scenario);

/// Opaque handle to a finished run.
pub struct LachesisRun(RunOutput);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LachesisMetrics {
    pub blocks_finalized: u64,
    pub transactions_executed: u64,
    pub events_emitted: u64,
    pub avg_ttf: f64,
    pub avg_tps: f64,
    pub violations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: LachesisStatus, msg: impl Into<String>) -> LachesisStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> LachesisStatus) -> LachesisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LachesisStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LachesisStatus> {
    if p.is_null() {
        return Err(fail(LachesisStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LachesisStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lachesis_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn lachesis_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Unit-stake scenario over `nodes` validators with defaults otherwise.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_uniform(
    nodes: u32,
    seed: u64,
    out: *mut *mut LachesisScenario,
) -> LachesisStatus {
    guard(|| {
        if out.is_null() {
            return fail(LachesisStatus::NullPointer, "out is null");
        }
        let s = Scenario::uniform(nodes as usize, seed);
        *out = Box::into_raw(Box::new(LachesisScenario(s)));
        LachesisStatus::Ok
    })
}

/// Parses a scenario from JSON, the same format `run.json` and
/// `lachesis-sim run --scenario` use.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_from_json(
    json: *const c_char,
    out: *mut *mut LachesisScenario,
) -> LachesisStatus {
    guard(|| {
        if out.is_null() {
            return fail(LachesisStatus::NullPointer, "out is null");
        }
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Scenario::from_json(text) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(LachesisScenario(s)));
                LachesisStatus::Ok
            }
            Err(e) => fail(LachesisStatus::InvalidScenario, e.to_string()),
        }
    })
}

/// Scenario as JSON. Writes at most `cap` bytes including the NUL and stores
/// the full size (with NUL) in `needed` when it is not null.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_to_json(
    s: *const LachesisScenario,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> LachesisStatus {
    guard(|| match s.as_ref() {
        None => fail(LachesisStatus::NullPointer, "scenario is null"),
        Some(s) => copy_out(&s.0.to_json(), buf, cap, needed),
    })
}

/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_set_duration_ms(
    s: *mut LachesisScenario,
    ms: u64,
) -> LachesisStatus {
    guard(|| match s.as_mut() {
        None => fail(LachesisStatus::NullPointer, "scenario is null"),
        Some(s) => match i64::try_from(ms).ok().and_then(|m| m.checked_mul(MILLI)) {
            Some(d) => {
                s.0.duration = d;
                LachesisStatus::Ok
            }
            None => fail(LachesisStatus::OutOfRange, "duration overflows"),
        },
    })
}

/// Makes `node` equivocate once at `at_ms`.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_add_fork(
    s: *mut LachesisScenario,
    node: u32,
    at_ms: u64,
) -> LachesisStatus {
    guard(|| match s.as_mut() {
        None => fail(LachesisStatus::NullPointer, "scenario is null"),
        Some(s) => match i64::try_from(at_ms).ok().and_then(|m| m.checked_mul(MILLI)) {
            Some(at) => {
                s.0.faults.push(Fault::Fork { node, at });
                LachesisStatus::Ok
            }
            None => fail(LachesisStatus::OutOfRange, "fork time overflows"),
        },
    })
}

/// # Safety
/// `s` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lachesis_scenario_free(s: *mut LachesisScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs the scenario to completion.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run(
    s: *const LachesisScenario,
    out: *mut *mut LachesisRun,
) -> LachesisStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(LachesisStatus::NullPointer, "scenario is null");
        };
        if out.is_null() {
            return fail(LachesisStatus::NullPointer, "out is null");
        }
        match simnet::run(&s.0) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(LachesisRun(r)));
                LachesisStatus::Ok
            }
            Err(e) => fail(LachesisStatus::InvalidScenario, e.to_string()),
        }
    })
}

/// # Safety
/// `r` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run_metrics(
    r: *const LachesisRun,
    out: *mut LachesisMetrics,
) -> LachesisStatus {
    guard(|| {
        let (Some(r), Some(out)) = (r.as_ref(), out.as_mut()) else {
            return fail(LachesisStatus::NullPointer, "run or out is null");
        };
        let m = &r.0.metrics;
        *out = LachesisMetrics {
            blocks_finalized: m.blocks_finalized,
            transactions_executed: m.transactions_executed,
            events_emitted: m.events_emitted,
            avg_ttf: m.avg_ttf,
            avg_tps: m.avg_tps,
            violations: r.0.report.violations.len() as u64,
        };
        LachesisStatus::Ok
    })
}

/// Number of nodes, and so of chain transcripts, in the run.
///
/// # Safety
/// `r` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run_node_count(r: *const LachesisRun, out: *mut usize) -> LachesisStatus {
    guard(|| {
        let (Some(r), Some(out)) = (r.as_ref(), out.as_mut()) else {
            return fail(LachesisStatus::NullPointer, "run or out is null");
        };
        *out = r.0.chains.len();
        LachesisStatus::Ok
    })
}

/// Node `node`'s chain transcript (JSON lines), copied like
/// [`lachesis_scenario_to_json`].
///
/// # Safety
/// `r` must be a live run handle; `buf` must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run_chain(
    r: *const LachesisRun,
    node: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> LachesisStatus {
    guard(|| {
        let Some(r) = r.as_ref() else {
            return fail(LachesisStatus::NullPointer, "run is null");
        };
        match r.0.chains.get(node) {
            Some(c) => copy_out(c, buf, cap, needed),
            None => fail(LachesisStatus::OutOfRange, format!("no node {node}")),
        }
    })
}

/// Writes all run artifacts under `dir`.
///
/// # Safety
/// `r` must be a live run handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run_write(r: *const LachesisRun, dir: *const c_char) -> LachesisStatus {
    guard(|| {
        let Some(r) = r.as_ref() else {
            return fail(LachesisStatus::NullPointer, "run is null");
        };
        let dir = match str_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match r.0.write_to(Path::new(dir)) {
            Ok(()) => LachesisStatus::Ok,
            Err(e) => fail(LachesisStatus::Io, format!("{dir}: {e}")),
        }
    })
}

/// # Safety
/// `r` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lachesis_run_free(r: *mut LachesisRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Compares `n` chain transcripts. `diverged_at` receives 0 when every pair
/// agrees on its shared prefix, else the 1-based index of the first bad block.
///
/// # Safety
/// `texts` must point to `n` NUL-terminated strings; `diverged_at` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lachesis_verify(
    texts: *const *const c_char,
    n: usize,
    diverged_at: *mut u64,
) -> LachesisStatus {
    guard(|| {
        if texts.is_null() || diverged_at.is_null() {
            return fail(LachesisStatus::NullPointer, "texts or diverged_at is null");
        }
        let mut named = Vec::with_capacity(n);
        for i in 0..n {
            match str_arg(*texts.add(i), "transcript") {
                Ok(t) => named.push((format!("transcript {i}"), t.to_string())),
                Err(s) => return s,
            }
        }
        match verify_transcripts(&named) {
            Ok(Verdict::Consistent { .. }) => {
                *diverged_at = 0;
                LachesisStatus::Ok
            }
            Ok(Verdict::Diverged { index, detail }) => {
                *diverged_at = index as u64;
                set_error(detail);
                LachesisStatus::Ok
            }
            Err(e) => fail(LachesisStatus::InvalidScenario, e),
        }
    })
}

unsafe fn copy_out(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> LachesisStatus {
    let bytes = s.as_bytes();
    if let Some(n) = needed.as_mut() {
        *n = bytes.len() + 1;
    }
    if cap < bytes.len() + 1 {
        return fail(LachesisStatus::BufferTooSmall, format!("need {} bytes", bytes.len() + 1));
    }
    if buf.is_null() {
        return fail(LachesisStatus::NullPointer, "buf is null");
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    LachesisStatus::Ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_out_reports_size() {
        let mut needed = 0;
        let st = unsafe { copy_out("abc", ptr::null_mut(), 0, &mut needed) };
        assert_eq!(st, LachesisStatus::BufferTooSmall);
        assert_eq!(needed, 4);
        let mut buf = [1 as c_char; 4];
        let st = unsafe { copy_out("abc", buf.as_mut_ptr(), 4, ptr::null_mut()) };
        assert_eq!(st, LachesisStatus::Ok);
        assert_eq!(buf[3], 0);
    }

    #[test]
    fn null_handles_are_refused() {
        let mut m = LachesisMetrics::default();
        let st = unsafe { lachesis_run_metrics(ptr::null(), &mut m) };
        assert_eq!(st, LachesisStatus::NullPointer);
        assert!(!lachesis_last_error().is_null());
        unsafe {
            lachesis_run_free(ptr::null_mut());
            lachesis_scenario_free(ptr::null_mut());
        }
    }
}
