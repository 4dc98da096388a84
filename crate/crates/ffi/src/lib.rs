//! C interface to the fedbcd simulator.
//!
//! Every function returns a [`FedbcdStatus`]; on failure a description is
//! available from [`fedbcd_last_error_message`] on the same thread.
//! Simulations are opaque handles created by [`fedbcd_simulation_new`] and
//! released with [`fedbcd_simulation_free`]. No function unwinds across the
//! boundary: panics are caught and reported as [`FedbcdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedbcd::config::RunConfig;
use fedbcd::experiment::build_simulator;
use fedbcd::latency::{latency_ratio, LatencyDistribution};
use fedbcd::metrics::MetricsRecord;
use fedbcd::protocol::Simulator;
use fedbcd::rng::{stream, Domain};
use fedbcd::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedbcdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    BufferTooSmall = 5,
    Runtime = 6,
    Panic = 7,
}

/// Opaque simulation handle.
pub struct FedbcdSimulation {
    sim: Simulator,
}

/// Diagnostics of one round. Accuracies are NaN when the task has no test
/// sets or is a regression.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedbcdMetrics {
    pub round: u64,
    pub sim_time: f64,
    pub stationarity_gap_mean: f64,
    pub z_grad_norm_sq: f64,
    pub consensus_max: f64,
    pub objective_value: f64,
    pub global_accuracy: f64,
    pub personalized_accuracy_mean: f64,
}

impl From<&MetricsRecord> for FedbcdMetrics {
    fn from(r: &MetricsRecord) -> Self {
        FedbcdMetrics {
            round: r.round,
            sim_time: r.sim_time,
            stationarity_gap_mean: r.stationarity_gap_mean,
            z_grad_norm_sq: r.z_grad_norm_sq,
            consensus_max: r.consensus_max,
            objective_value: r.objective_value,
            global_accuracy: r.global_accuracy.unwrap_or(f64::NAN),
            personalized_accuracy_mean: r.personalized_accuracy_mean.unwrap_or(f64::NAN),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    // Interior NULs would truncate the message; replace them.
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FedbcdStatus, msg: impl Into<String>) -> FedbcdStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> FedbcdStatus {
    match e {
        Error::Config(_)
        | Error::InvalidHyper(_)
        | Error::InvalidDistribution(_)
        | Error::Protocol(_) => FedbcdStatus::InvalidConfig,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => {
            FedbcdStatus::InvalidArgument
        }
        _ => FedbcdStatus::Runtime,
    }
}

fn from_error(e: Error) -> FedbcdStatus {
    fail(status_of(&e), e.to_string())
}

/// Runs `body`, converting panics into [`FedbcdStatus::Panic`].
fn guard(body: impl FnOnce() -> FedbcdStatus) -> FedbcdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FedbcdStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, FedbcdStatus> {
    if s.is_null() {
        return Err(fail(FedbcdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        fail(
            FedbcdStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn parse_dist(s: &str) -> Result<LatencyDistribution, FedbcdStatus> {
    s.parse::<LatencyDistribution>().map_err(from_error)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fedbcd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a simulation from a TOML configuration and a seed.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_new(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut FedbcdSimulation,
) -> FedbcdStatus {
    guard(|| {
        if out.is_null() {
            return fail(FedbcdStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(config_toml, "config_toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let built = RunConfig::from_toml_str(text)
            .and_then(|cfg| cfg.validate().into_result().map(|_| cfg))
            .and_then(|cfg| build_simulator(&cfg, seed));
        match built {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(FedbcdSimulation { sim }));
                FedbcdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a simulation. Null is ignored.
///
/// # Safety
/// `sim` must come from [`fedbcd_simulation_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_free(sim: *mut FedbcdSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs one round. `metrics` may be null.
///
/// # Safety
/// `sim` must be a live handle; `metrics` null or writable.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_step(
    sim: *mut FedbcdSimulation,
    metrics: *mut FedbcdMetrics,
) -> FedbcdStatus {
    guard(|| {
        let Some(h) = sim.as_mut() else {
            return fail(FedbcdStatus::NullPointer, "sim is null");
        };
        match h.sim.step() {
            Ok(out) => {
                if !metrics.is_null() {
                    *metrics = FedbcdMetrics::from(&out.record);
                }
                FedbcdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Metrics of the current state without advancing.
///
/// # Safety
/// `sim` must be a live handle and `metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_metrics(
    sim: *const FedbcdSimulation,
    metrics: *mut FedbcdMetrics,
) -> FedbcdStatus {
    guard(|| {
        let (Some(h), false) = (sim.as_ref(), metrics.is_null()) else {
            return fail(FedbcdStatus::NullPointer, "sim or metrics is null");
        };
        match h.sim.initial_record() {
            Ok(r) => {
                *metrics = FedbcdMetrics::from(&r);
                FedbcdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Completed rounds; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_round(sim: *const FedbcdSimulation) -> u64 {
    sim.as_ref().map_or(0, |h| h.sim.state().round)
}

/// Simulated seconds elapsed; NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_sim_time(sim: *const FedbcdSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |h| h.sim.state().sim_time)
}

/// Model dimension; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_dim(sim: *const FedbcdSimulation) -> usize {
    sim.as_ref().map_or(0, |h| h.sim.problem().dim())
}

/// Number of cloud servers; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_num_servers(sim: *const FedbcdSimulation) -> usize {
    sim.as_ref().map_or(0, |h| h.sim.problem().num_servers())
}

/// Copies the model of `server` into `buf`, which holds `len` doubles and
/// must fit [`fedbcd_simulation_dim`] of them.
///
/// # Safety
/// `sim` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_simulation_server_model(
    sim: *const FedbcdSimulation,
    server: usize,
    buf: *mut f64,
    len: usize,
) -> FedbcdStatus {
    guard(|| {
        let (Some(h), false) = (sim.as_ref(), buf.is_null()) else {
            return fail(FedbcdStatus::NullPointer, "sim or buf is null");
        };
        let Some(z) = h.sim.state().cloud.z.get(server) else {
            return fail(
                FedbcdStatus::InvalidArgument,
                format!(
                    "server {server} out of range 0..{}",
                    h.sim.problem().num_servers()
                ),
            );
        };
        if len < z.dim() {
            return fail(
                FedbcdStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", z.dim()),
            );
        }
        std::slice::from_raw_parts_mut(buf, z.dim()).copy_from_slice(z.as_slice());
        FedbcdStatus::Ok
    })
}

/// Monte Carlo estimate of the latency ratio `E[tau_(b)] / E[tau_(n)]` for a
/// distribution spec such as `"exp:1"` or `"weibull:2:1"`. `std_error` may be
/// null.
///
/// # Safety
/// `dist` must be a NUL-terminated string; `mean` writable; `std_error`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_latency_ratio(
    dist: *const c_char,
    n: usize,
    b: usize,
    trials: usize,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> FedbcdStatus {
    guard(|| {
        if mean.is_null() {
            return fail(FedbcdStatus::NullPointer, "mean is null");
        }
        let d = match read_str(dist, "dist").and_then(parse_dist) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match latency_ratio(
            &d,
            n,
            b,
            trials,
            &mut stream(seed, Domain::Study, 0, n as u64),
        ) {
            Ok(e) => {
                *mean = e.mean;
                if !std_error.is_null() {
                    *std_error = e.std_error;
                }
                FedbcdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Quantile `F^-1(u)` of a distribution spec, for `u` in (0, 1).
///
/// # Safety
/// `dist` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedbcd_quantile(
    dist: *const c_char,
    u: f64,
    out: *mut f64,
) -> FedbcdStatus {
    guard(|| {
        if out.is_null() {
            return fail(FedbcdStatus::NullPointer, "out is null");
        }
        let d = match read_str(dist, "dist").and_then(parse_dist) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match d.quantile(u) {
            Ok(q) => {
                *out = q;
                FedbcdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
