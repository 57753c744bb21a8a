//! C ABI for the `nearmiss` simulator and fuzzing pipeline.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`NmStatus`]; on failure [`nm_last_error`] describes the error for the
//! calling thread. Strings returned to the caller are released with
//! [`nm_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nearmiss::clipper::{clip, ClippedScenario};
use nearmiss::forecaster::{forecast, ForecastConfig, RiskyPoint};
use nearmiss::mutator::generate_children;
use nearmiss::{library, Error, FailureType, OutcomeKind, Scenario, Trace};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed scenario, trace or configuration.
    InvalidInput = 3,
    UnknownVariant = 4,
    /// The trace ends in a collision and cannot be forecast or clipped.
    NotFailureFree = 5,
    /// The clip window or clip end could not be built.
    ClipFailed = 6,
    /// No child could be generated from the clip.
    MutationFailed = 7,
    OutOfRange = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmOutcomeKind {
    Completed = 0,
    Collision = 1,
    Stuck = 2,
}

/// Outcome of a finished run. `failure_type` is 1 to 5 for F1 to F5 and 0
/// when there was no collision.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NmOutcome {
    pub kind: NmOutcomeKind,
    pub failure_type: u8,
    pub frames: usize,
    pub duration: f64,
}

/// One ranked risky point. `tier` is 3 for critical-crossing, 2 for
/// critical and 1 for crossing NPCs.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NmRiskyPoint {
    pub actor_id: u32,
    pub frame: usize,
    pub tier: u8,
    pub distance: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NmFuzzSummary {
    pub children: usize,
    pub collisions: usize,
    pub stuck: usize,
}

/// Opaque scenario handle.
pub struct NmScenario(Scenario);

/// Opaque recorded trace.
pub struct NmTrace(Trace);

/// Opaque ranked risky-point list.
pub struct NmForecast(Vec<RiskyPoint>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> NmStatus {
    match e {
        Error::UnknownVariant(_) => NmStatus::UnknownVariant,
        Error::NotFailureFree(_) | Error::SeedNotFailureFree(_) => NmStatus::NotFailureFree,
        Error::WindowDegenerate { .. } | Error::NoValidEndWaypoint { .. } | Error::InvalidClip(_) => {
            NmStatus::ClipFailed
        }
        Error::NoRelevantNpc | Error::NoValidModel(_) | Error::TargetNotVehicle(_) => NmStatus::MutationFailed,
        Error::UnknownActor(_) => NmStatus::OutOfRange,
        Error::Io(_) => NmStatus::Io,
        _ => NmStatus::InvalidInput,
    }
}

fn fail(status: NmStatus, msg: impl Into<String>) -> NmStatus {
    set_error(msg.into());
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), NmStatus>) -> NmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NmStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(NmStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> NmStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, NmStatus> {
    if s.is_null() {
        return Err(fail(NmStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(NmStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, NmStatus> {
    p.as_ref().ok_or_else(|| fail(NmStatus::NullArgument, "null handle"))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, NmStatus> {
    p.as_mut().ok_or_else(|| fail(NmStatus::NullArgument, "null output pointer"))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn nm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Free a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn nm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Instantiate a built-in scenario such as `crossing-ahead/0`.
#[no_mangle]
pub unsafe extern "C" fn nm_scenario_builtin(name: *const c_char, out_scenario: *mut *mut NmScenario) -> NmStatus {
    guard(|| {
        let name = str_arg(name)?;
        let slot = out(out_scenario)?;
        *slot = boxed(NmScenario(library::lookup(name).map_err(lib_err)?));
        Ok(())
    })
}

/// Parse and validate a scenario from its JSON form.
#[no_mangle]
pub unsafe extern "C" fn nm_scenario_from_json(json: *const c_char, out_scenario: *mut *mut NmScenario) -> NmStatus {
    guard(|| {
        let json = str_arg(json)?;
        let slot = out(out_scenario)?;
        *slot = boxed(NmScenario(Scenario::from_json_str(json).map_err(lib_err)?));
        Ok(())
    })
}

/// Serialize a scenario to JSON. Free the result with [`nm_string_free`].
#[no_mangle]
pub unsafe extern "C" fn nm_scenario_to_json(scenario: *const NmScenario, out_json: *mut *mut c_char) -> NmStatus {
    guard(|| {
        let s = handle(scenario)?;
        let slot = out(out_json)?;
        let json = s.0.to_json_string().map_err(lib_err)?;
        *slot = CString::new(json).map_err(|_| fail(NmStatus::InvalidInput, "NUL in JSON"))?.into_raw();
        Ok(())
    })
}

/// Number of NPCs in a scenario, 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn nm_scenario_npc_count(scenario: *const NmScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.0.npcs.len())
}

#[no_mangle]
pub unsafe extern "C" fn nm_scenario_free(scenario: *mut NmScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulate a scenario to completion.
#[no_mangle]
pub unsafe extern "C" fn nm_run(scenario: *const NmScenario, out_trace: *mut *mut NmTrace) -> NmStatus {
    guard(|| {
        let s = handle(scenario)?;
        let slot = out(out_trace)?;
        *slot = boxed(NmTrace(nearmiss::run(&s.0).map_err(lib_err)?));
        Ok(())
    })
}

fn failure_code(f: Option<FailureType>) -> u8 {
    match f {
        None => 0,
        Some(FailureType::F1) => 1,
        Some(FailureType::F2) => 2,
        Some(FailureType::F3) => 3,
        Some(FailureType::F4) => 4,
        Some(FailureType::F5) => 5,
    }
}

#[no_mangle]
pub unsafe extern "C" fn nm_trace_outcome(trace: *const NmTrace, out_outcome: *mut NmOutcome) -> NmStatus {
    guard(|| {
        let t = &handle(trace)?.0;
        *out(out_outcome)? = NmOutcome {
            kind: match t.outcome.kind {
                OutcomeKind::Completed => NmOutcomeKind::Completed,
                OutcomeKind::Collision => NmOutcomeKind::Collision,
                OutcomeKind::Stuck => NmOutcomeKind::Stuck,
            },
            failure_type: failure_code(t.outcome.failure_type),
            frames: t.frames.len(),
            duration: t.duration(),
        };
        Ok(())
    })
}

/// Ego position at `frame`.
#[no_mangle]
pub unsafe extern "C" fn nm_trace_ego_position(
    trace: *const NmTrace,
    frame: usize,
    out_x: *mut f64,
    out_y: *mut f64,
) -> NmStatus {
    guard(|| {
        let t = &handle(trace)?.0;
        let f = t
            .frames
            .get(frame)
            .ok_or_else(|| fail(NmStatus::OutOfRange, format!("frame {frame} out of range")))?;
        *out(out_x)? = f.ego.pose.position.x;
        *out(out_y)? = f.ego.pose.position.y;
        Ok(())
    })
}

/// Write the trace as CSV with its outcome sidecar next to it.
#[no_mangle]
pub unsafe extern "C" fn nm_trace_save(trace: *const NmTrace, csv_path: *const c_char) -> NmStatus {
    guard(|| {
        let t = handle(trace)?;
        let path = str_arg(csv_path)?;
        t.0.save(path).map_err(lib_err)
    })
}

#[no_mangle]
pub unsafe extern "C" fn nm_trace_free(trace: *mut NmTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Rank the risky points of a failure-free trace with default thresholds.
/// `seed` drives the ego trajectory perturbations.
#[no_mangle]
pub unsafe extern "C" fn nm_forecast(trace: *const NmTrace, seed: u64, out_forecast: *mut *mut NmForecast) -> NmStatus {
    guard(|| {
        let t = handle(trace)?;
        let slot = out(out_forecast)?;
        let mut cfg = ForecastConfig::default();
        cfg.perturbation.seed = seed;
        *slot = boxed(NmForecast(forecast(&t.0, &cfg).map_err(lib_err)?.risky_points));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nm_forecast_len(forecast: *const NmForecast) -> usize {
    forecast.as_ref().map_or(0, |f| f.0.len())
}

/// Risky point of rank `index`, 0 being the riskiest.
#[no_mangle]
pub unsafe extern "C" fn nm_forecast_get(
    forecast: *const NmForecast,
    index: usize,
    out_point: *mut NmRiskyPoint,
) -> NmStatus {
    guard(|| {
        let f = handle(forecast)?;
        let rp = f
            .0
            .get(index)
            .ok_or_else(|| fail(NmStatus::OutOfRange, format!("rank {index} out of range")))?;
        *out(out_point)? = NmRiskyPoint {
            actor_id: rp.actor_id.0,
            frame: rp.frame,
            tier: rp.category.tier().unwrap_or(0),
            distance: rp.closest_distance,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn nm_forecast_free(forecast: *mut NmForecast) {
    if !forecast.is_null() {
        drop(Box::from_raw(forecast));
    }
}

/// Cut a runnable clip spanning `o_b` seconds before and `o_a` seconds
/// after `frame`. The clip is an ordinary scenario handle.
#[no_mangle]
pub unsafe extern "C" fn nm_clip(
    scenario: *const NmScenario,
    trace: *const NmTrace,
    frame: usize,
    o_b: f64,
    o_a: f64,
    out_clip: *mut *mut NmScenario,
) -> NmStatus {
    guard(|| {
        let s = handle(scenario)?;
        let t = handle(trace)?;
        let slot = out(out_clip)?;
        let c = clip(&s.0, &t.0, frame, o_b, o_a).map_err(lib_err)?;
        *slot = boxed(NmScenario(c.scenario));
        Ok(())
    })
}

/// Generate `children` mutated copies of a clip and run them.
#[no_mangle]
pub unsafe extern "C" fn nm_fuzz(
    clip: *const NmScenario,
    children: usize,
    seed: u64,
    out_summary: *mut NmFuzzSummary,
) -> NmStatus {
    guard(|| {
        let c = handle(clip)?;
        let slot = out(out_summary)?;
        let clipped = ClippedScenario::from_scenario(c.0.clone()).map_err(lib_err)?;
        let batch = generate_children(&clipped, children, seed).map_err(lib_err)?;
        let mut summary = NmFuzzSummary::default();
        for child in &batch.children {
            let t = nearmiss::run(&child.scenario).map_err(lib_err)?;
            summary.children += 1;
            match t.outcome.kind {
                OutcomeKind::Collision => summary.collisions += 1,
                OutcomeKind::Stuck => summary.stuck += 1,
                OutcomeKind::Completed => {}
            }
        }
        *slot = summary;
        Ok(())
    })
}
