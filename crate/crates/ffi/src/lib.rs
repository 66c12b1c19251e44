//! C interface to the `lasalt` solver suite.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`LasaltStatus`]; on failure [`lasalt_last_error`] describes the cause
//! for the calling thread. Field arrays are row-major with `y` outermost
//! and components concatenated, as in LSF1 files.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use lasalt::config::RunConfig;
use lasalt::expectation::ExpectationTrajectory;
use lasalt::fields::{double_lie, lie_scalar, ScalarField, VectorField};
use lasalt::grid::{biot_savart, TorusGrid};
use lasalt::lsf1::{self, Snapshot};
use lasalt::noise::{build_noise_basis, NoiseBasis, NoiseSpec};
use lasalt::run::Setup;
use lasalt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LasaltStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    HashMismatch = 7,
    VerifyFailed = 8,
    Panic = 9,
}

/// Periodic grid.
pub struct LasaltGrid {
    grid: Arc<TorusGrid>,
}

/// Noise basis on a grid.
pub struct LasaltNoise {
    basis: NoiseBasis,
}

/// Stored expectation trajectory.
pub struct LasaltTrajectory {
    traj: ExpectationTrajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("no interior nul"));
}

fn status_of(e: &Error) -> LasaltStatus {
    match e {
        Error::Member { source, .. } => status_of(source),
        e if e.is_numerical() => LasaltStatus::Numerical,
        Error::HashMismatch(_) => LasaltStatus::HashMismatch,
        Error::Config(_) | Error::ConfigMismatch(_) | Error::Json(_) => LasaltStatus::Config,
        Error::Io(_) | Error::Csv(_) => LasaltStatus::Io,
        Error::Format(_) => LasaltStatus::Format,
        _ => LasaltStatus::InvalidArgument,
    }
}

struct Failure(LasaltStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LasaltStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(LasaltStatus::InvalidArgument, msg)
}

/// Runs `body`, converting errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LasaltStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            LasaltStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            LasaltStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the last failure on this thread (empty after a
/// success). Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lasalt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an `n x n` grid of period `length` (pass 0 for 2 pi).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lasalt_grid_new(n: u32, length: f64, out: *mut *mut LasaltGrid) -> LasaltStatus {
    guard(|| {
        let l = if length == 0.0 { TorusGrid::DEFAULT_LENGTH } else { length };
        let grid = TorusGrid::with_params(n as usize, l, TorusGrid::DEFAULT_DEALIAS)?;
        put(out, LasaltGrid { grid })
    })
}

/// # Safety
/// `grid` must come from [`lasalt_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lasalt_grid_free(grid: *mut LasaltGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of nodes `n * n`, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lasalt_grid_nodes(grid: *const LasaltGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.nodes())
}

/// Builds a noise basis from its JSON description, for example
/// `"canonical(0.1)"` (with the quotes) or a list of fields.
///
/// # Safety
/// `grid` must be live, `spec_json` a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_noise_new(
    grid: *const LasaltGrid,
    spec_json: *const c_char,
    out: *mut *mut LasaltNoise,
) -> LasaltStatus {
    guard(|| {
        let g = handle(grid, "grid")?;
        let spec: NoiseSpec = serde_json::from_str(str_arg(spec_json, "spec_json")?)
            .map_err(|e| Failure(LasaltStatus::Config, e.to_string()))?;
        let basis = build_noise_basis(&g.grid, &spec)?;
        put(out, LasaltNoise { basis })
    })
}

/// # Safety
/// `noise` must come from [`lasalt_noise_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lasalt_noise_free(noise: *mut LasaltNoise) {
    if !noise.is_null() {
        drop(Box::from_raw(noise));
    }
}

/// Ellipticity constant of the basis.
///
/// # Safety
/// `noise` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_noise_lambda_min(noise: *const LasaltNoise, out: *mut f64) -> LasaltStatus {
    guard(|| {
        let n = handle(noise, "noise")?;
        *out.as_mut().ok_or_else(|| null("out"))? = n.basis.lambda_min();
        Ok(())
    })
}

/// `out = xi . grad f` for a vector field `xi` (2 nodes values) and scalar `f`.
///
/// # Safety
/// Arrays must hold `2 * nodes`, `nodes` and `nodes` values respectively.
#[no_mangle]
pub unsafe extern "C" fn lasalt_lie_scalar(
    grid: *const LasaltGrid,
    xi: *const f64,
    f: *const f64,
    out: *mut f64,
) -> LasaltStatus {
    guard(|| {
        let g = &handle(grid, "grid")?.grid;
        let m = g.nodes();
        let xi = VectorField::from_data(g.clone(), input(xi, 2 * m, "xi")?.to_vec())?;
        let f = ScalarField::from_values(g.clone(), input(f, m, "f")?.to_vec())?;
        output(out, m, "out")?.copy_from_slice(lie_scalar(&xi, &f)?.values());
        Ok(())
    })
}

/// `out = sum_k L_k L_k f` over the basis.
///
/// # Safety
/// `f` and `out` must hold `nodes` values of the basis grid.
#[no_mangle]
pub unsafe extern "C" fn lasalt_double_lie_scalar(noise: *const LasaltNoise, f: *const f64, out: *mut f64) -> LasaltStatus {
    guard(|| {
        let b = &handle(noise, "noise")?.basis;
        let g = b.grid();
        let m = g.nodes();
        let f = ScalarField::from_values(g.clone(), input(f, m, "f")?.to_vec())?;
        output(out, m, "out")?.copy_from_slice(double_lie(b, &f)?.values());
        Ok(())
    })
}

/// Mean-free, divergence-free velocity with curl `omega`; `out` holds
/// `2 * nodes` values.
///
/// # Safety
/// `omega` must hold `nodes` values and `out` twice that.
#[no_mangle]
pub unsafe extern "C" fn lasalt_biot_savart(grid: *const LasaltGrid, omega: *const f64, out: *mut f64) -> LasaltStatus {
    guard(|| {
        let g = &handle(grid, "grid")?.grid;
        let m = g.nodes();
        let w = ScalarField::from_values(g.clone(), input(omega, m, "omega")?.to_vec())?;
        output(out, 2 * m, "out")?.copy_from_slice(biot_savart(&w)?.data());
        Ok(())
    })
}

/// Runs the expectation solve described by a configuration document.
///
/// # Safety
/// `config_json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_expectation_run(config_json: *const c_char, out: *mut *mut LasaltTrajectory) -> LasaltStatus {
    guard(|| {
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        let traj = Setup::new(&cfg)?.expectation()?;
        put(out, LasaltTrajectory { traj })
    })
}

/// Loads a trajectory directory written by `lasalt expectation`.
///
/// # Safety
/// `dir` must be a nul-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_trajectory_load(dir: *const c_char, out: *mut *mut LasaltTrajectory) -> LasaltStatus {
    guard(|| {
        let traj = ExpectationTrajectory::load(Path::new(str_arg(dir, "dir")?))?;
        put(out, LasaltTrajectory { traj })
    })
}

/// Writes `meta.json` and LSF1 snapshots into `dir`.
///
/// # Safety
/// `traj` must be live and `dir` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn lasalt_trajectory_save(traj: *const LasaltTrajectory, dir: *const c_char) -> LasaltStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        t.traj.save(Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lasalt_trajectory_free(traj: *mut LasaltTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of stored snapshots and the grid size `n`.
///
/// # Safety
/// `traj` must be live; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_trajectory_shape(
    traj: *const LasaltTrajectory,
    snapshots: *mut usize,
    grid_n: *mut u32,
) -> LasaltStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        *snapshots.as_mut().ok_or_else(|| null("snapshots"))? = t.traj.len();
        *grid_n.as_mut().ok_or_else(|| null("grid_n"))? = t.traj.grid().n() as u32;
        Ok(())
    })
}

/// Copies snapshot `index` of `Theta` and its time into caller storage.
///
/// # Safety
/// `out` must hold `len` values, `len >= n * n`; `time` may be null.
#[no_mangle]
pub unsafe extern "C" fn lasalt_trajectory_theta(
    traj: *const LasaltTrajectory,
    index: usize,
    out: *mut f64,
    len: usize,
    time: *mut f64,
) -> LasaltStatus {
    guard(|| {
        let t = handle(traj, "trajectory")?;
        let state = t
            .traj
            .states
            .get(index)
            .ok_or_else(|| invalid(format!("snapshot {index} out of range ({} stored)", t.traj.len())))?;
        let v = state.theta.values();
        if len < v.len() {
            return Err(invalid(format!("buffer holds {len} values, {} needed", v.len())));
        }
        output(out, v.len(), "out")?.copy_from_slice(v);
        if let Some(tp) = time.as_mut() {
            *tp = state.t;
        }
        Ok(())
    })
}

/// Runs the acceptance ladder. `config_json` may be null for the built-in
/// desk configuration. The report is returned in `report_json` (free it
/// with [`lasalt_string_free`]) even when criteria fail, in which case the
/// status is `VerifyFailed`.
///
/// # Safety
/// `config_json` must be null or nul-terminated; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_verify(config_json: *const c_char, report_json: *mut *mut c_char) -> LasaltStatus {
    let mut failed = false;
    let status = guard(|| {
        let cfg = if config_json.is_null() {
            RunConfig::desk_default()
        } else {
            RunConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let report = lasalt::verify::verify(&cfg)?;
        failed = !report.pass;
        let text = CString::new(report.to_json()).map_err(|e| invalid(e.to_string()))?;
        *report_json = text.into_raw();
        Ok(())
    });
    if status == LasaltStatus::Ok && failed {
        set_error("one or more criteria failed");
        return LasaltStatus::VerifyFailed;
    }
    status
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lasalt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes one LSF1 snapshot of `n_components * grid_n^2` values.
///
/// # Safety
/// `path` must be nul-terminated and `values` hold the stated count.
#[no_mangle]
pub unsafe extern "C" fn lasalt_lsf1_write(
    path: *const c_char,
    grid_n: u32,
    n_components: u32,
    step_index: u64,
    time: f64,
    values: *const f64,
) -> LasaltStatus {
    guard(|| {
        let count = n_components as usize * (grid_n as usize).pow(2);
        let snap = Snapshot { grid_n, n_components, step_index, time, values: input(values, count, "values")?.to_vec() };
        lsf1::write_file(Path::new(str_arg(path, "path")?), &snap)?;
        Ok(())
    })
}

/// Header of an LSF1 file. Any output pointer may be null.
///
/// # Safety
/// `path` must be nul-terminated; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lasalt_lsf1_read_header(
    path: *const c_char,
    grid_n: *mut u32,
    n_components: *mut u32,
    step_index: *mut u64,
    time: *mut f64,
) -> LasaltStatus {
    guard(|| {
        let snap = lsf1::read_file(Path::new(str_arg(path, "path")?))?;
        if let Some(p) = grid_n.as_mut() {
            *p = snap.grid_n;
        }
        if let Some(p) = n_components.as_mut() {
            *p = snap.n_components;
        }
        if let Some(p) = step_index.as_mut() {
            *p = snap.step_index;
        }
        if let Some(p) = time.as_mut() {
            *p = snap.time;
        }
        Ok(())
    })
}

/// Values of an LSF1 file into a buffer of `len` values.
///
/// # Safety
/// `path` must be nul-terminated and `out` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lasalt_lsf1_read_values(path: *const c_char, out: *mut f64, len: usize) -> LasaltStatus {
    guard(|| {
        let snap = lsf1::read_file(Path::new(str_arg(path, "path")?))?;
        if len < snap.values.len() {
            return Err(invalid(format!("buffer holds {len} values, {} needed", snap.values.len())));
        }
        output(out, snap.values.len(), "out")?.copy_from_slice(&snap.values);
        Ok(())
    })
}
