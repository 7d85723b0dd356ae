//! C ABI over the crowd-ode pipeline. Handles are opaque pointers owned by
//! the library; every fallible call returns a [`CoStatus`] and leaves a
//! message readable through [`co_last_error`] on failure.
//!
//! Thread safety: handles are not synchronized; share them across threads
//! only behind the caller's own lock. The error message is thread-local.

use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use crowd_ode::config::RunConfig;
use crowd_ode::error::Error;
use crowd_ode::forcefield::Checkpoint;
use crowd_ode::metrics::{self, SimModel};
use crowd_ode::preset;
use crowd_ode::trajectory::{self, TrajectoryMeta, TRAJECTORY_FORMAT};

/// Status code for every fallible call.
#[repr(C)]
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum CoStatus {
    Ok = 0,
    /// The configuration failed to parse or validate.
    InvalidConfig = 1,
    /// Simulation, training, or evaluation failed at runtime.
    Runtime = 2,
    /// A file could not be read or written.
    Io = 3,
    /// A null pointer, non-UTF-8 string, or out-of-range argument.
    Argument = 4,
}

/// Owns a validated run configuration.
pub struct CoConfig(RunConfig);

/// Owns a trained model checkpoint.
pub struct CoCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: std::cell::RefCell<CString> =
        std::cell::RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn status_of(err: &Error) -> CoStatus {
    match err.exit_code() {
        1 => CoStatus::InvalidConfig,
        3 => CoStatus::Io,
        _ => CoStatus::Runtime,
    }
}

fn fail(err: Error) -> CoStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn arg_error(msg: &str) -> CoStatus {
    set_error(msg.to_string());
    CoStatus::Argument
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, CoStatus> {
    if ptr.is_null() {
        return Err(arg_error(&format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| arg_error(&format!("{what} is not valid UTF-8")))
}

fn guarded(body: impl FnOnce() -> CoStatus) -> CoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            CoStatus::Runtime
        }
    }
}

/// Message from the most recent failing call on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn co_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn co_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn deliver_config(cfg: RunConfig, out: *mut *mut CoConfig) -> CoStatus {
    if out.is_null() {
        return arg_error("out is null");
    }
    match cfg.validate() {
        Ok(()) => {
            *out = Box::into_raw(Box::new(CoConfig(cfg)));
            CoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads and validates a TOML run configuration from a file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the handle; release it with
/// [`co_config_free`].
#[no_mangle]
pub unsafe extern "C" fn co_config_from_file(
    path: *const c_char,
    out: *mut *mut CoConfig,
) -> CoStatus {
    guarded(|| {
        let path = match cstr(path, "path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match RunConfig::load(Path::new(path)) {
            Ok(cfg) => deliver_config(cfg, out),
            Err(e) => fail(e),
        }
    })
}

/// Parses and validates a TOML run configuration from a string.
///
/// # Safety
/// As [`co_config_from_file`], with `toml` holding the document body.
#[no_mangle]
pub unsafe extern "C" fn co_config_from_toml(
    toml: *const c_char,
    out: *mut *mut CoConfig,
) -> CoStatus {
    guarded(|| {
        let body = match cstr(toml, "toml") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match RunConfig::from_toml(body) {
            Ok(cfg) => deliver_config(cfg, out),
            Err(e) => fail(e),
        }
    })
}

/// Loads one of the packaged experiment presets by name.
///
/// # Safety
/// As [`co_config_from_file`].
#[no_mangle]
pub unsafe extern "C" fn co_config_preset(
    name: *const c_char,
    out: *mut *mut CoConfig,
) -> CoStatus {
    guarded(|| {
        let name = match cstr(name, "name") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match preset::preset_config(name) {
            Ok(cfg) => deliver_config(cfg, out),
            Err(e) => fail(e),
        }
    })
}

/// Replaces the master seed.
///
/// # Safety
/// `cfg` must be a live handle from a `co_config_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn co_config_set_seed(cfg: *mut CoConfig, seed: u64) -> CoStatus {
    if cfg.is_null() {
        return arg_error("cfg is null");
    }
    (*cfg).0.seed = seed;
    CoStatus::Ok
}

/// Writes the config digest (64 hex chars) into `buf` as a NUL-terminated
/// string. `cap` is the buffer capacity in bytes; 65 is enough.
///
/// # Safety
/// `cfg` must be a live handle; `buf` must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn co_config_digest(
    cfg: *const CoConfig,
    buf: *mut c_char,
    cap: usize,
) -> CoStatus {
    guarded(|| {
        if cfg.is_null() {
            return arg_error("cfg is null");
        }
        if buf.is_null() {
            return arg_error("buf is null");
        }
        let digest = (*cfg).0.digest();
        if cap < digest.len() + 1 {
            return arg_error("buf is too small; need 65 bytes");
        }
        std::ptr::copy_nonoverlapping(digest.as_ptr(), buf as *mut u8, digest.len());
        *buf.add(digest.len()) = 0;
        CoStatus::Ok
    })
}

/// # Safety
/// `cfg` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn co_config_free(cfg: *mut CoConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates the configured teacher model and writes the trajectory
/// dataset plus `manifest.json` into `dir`.
///
/// # Safety
/// `cfg` must be a live handle; `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn co_generate_data(cfg: *const CoConfig, dir: *const c_char) -> CoStatus {
    guarded(|| {
        if cfg.is_null() {
            return arg_error("cfg is null");
        }
        let dir = match cstr(dir, "dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match preset::generate_data(&(*cfg).0, Path::new(dir)) {
            Ok(_) => CoStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Trains the force field on a dataset manifest and writes the checkpoint
/// to `checkpoint_path`.
///
/// # Safety
/// `cfg` must be a live handle; both paths valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn co_train(
    cfg: *const CoConfig,
    manifest_path: *const c_char,
    checkpoint_path: *const c_char,
) -> CoStatus {
    guarded(|| {
        if cfg.is_null() {
            return arg_error("cfg is null");
        }
        let manifest = match cstr(manifest_path, "manifest_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let out = match cstr(checkpoint_path, "checkpoint_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let cfg = &(*cfg).0;
        let result = preset::load_windows(cfg, Path::new(manifest))
            .and_then(|(windows, _)| preset::train_model(cfg, &windows, |_| {}))
            .and_then(|(ck, _)| ck.save(Path::new(out)));
        match result {
            Ok(()) => CoStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Opens a trained checkpoint.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer. On
/// success `*out` owns the handle; release it with [`co_checkpoint_free`].
#[no_mangle]
pub unsafe extern "C" fn co_checkpoint_open(
    path: *const c_char,
    out: *mut *mut CoCheckpoint,
) -> CoStatus {
    guarded(|| {
        let path = match cstr(path, "path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        if out.is_null() {
            return arg_error("out is null");
        }
        match Checkpoint::load(Path::new(path)) {
            Ok(ck) => {
                *out = Box::into_raw(Box::new(CoCheckpoint(ck)));
                CoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `ck` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn co_checkpoint_free(ck: *mut CoCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Rolls out the learned model for a fresh crowd of `n_agents` spawned
/// with `seed` (using the config's eval section for everything else) and
/// writes the trajectory CSV plus its metadata sidecar to `csv_path`.
/// When `evacuation_time_s` is non-null it receives the time the last
/// agent left, or NaN if anyone was still inside at the horizon.
///
/// # Safety
/// `cfg` and `ck` must be live handles; `csv_path` a valid NUL-terminated
/// string; `evacuation_time_s` null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn co_simulate_to_file(
    cfg: *const CoConfig,
    ck: *const CoCheckpoint,
    n_agents: usize,
    seed: u64,
    csv_path: *const c_char,
    evacuation_time_s: *mut f64,
) -> CoStatus {
    guarded(|| {
        if cfg.is_null() {
            return arg_error("cfg is null");
        }
        if ck.is_null() {
            return arg_error("ck is null");
        }
        if n_agents == 0 {
            return arg_error("n_agents must be >= 1");
        }
        let path = match cstr(csv_path, "csv_path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let cfg = &(*cfg).0;
        let ck = &(*ck).0;
        match simulate_to_file(cfg, ck, n_agents, seed, Path::new(path)) {
            Ok(evac) => {
                if !evacuation_time_s.is_null() {
                    *evacuation_time_s = evac.unwrap_or(f64::NAN);
                }
                CoStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

fn simulate_to_file(
    cfg: &RunConfig,
    ck: &Checkpoint,
    n_agents: usize,
    seed: u64,
    csv_path: &Path,
) -> crowd_ode::Result<Option<f64>> {
    ck.validate()?;
    let scene = cfg.scene.build()?;
    let model = SimModel::Learned {
        field: &ck.field,
        theta: &ck.theta,
        step: cfg.eval.solver_step,
    };
    let z0 = scene.sample_initial_state(
        n_agents,
        cfg.eval.spawn_mode,
        cfg.eval.min_separation,
        seed,
    )?;
    let record_every = cfg.eval_record_every(cfg.eval.solver_step)?;
    let traj = model.rollout(&scene, &z0, cfg.eval.t_max, record_every)?;
    let meta = TrajectoryMeta {
        format: TRAJECTORY_FORMAT.into(),
        model: "learned".into(),
        seed,
        n_agents,
        record_interval: cfg.eval.record_interval,
        step_size: cfg.eval.solver_step,
        scene: scene.clone(),
        params: serde_json_params(ck, cfg),
        exit_times: traj.exit_times.clone(),
        exit_steps: traj.exit_steps.clone(),
    };
    trajectory::save(&traj, &meta, csv_path)?;
    Ok(metrics::evacuation_time(&traj.exit_times))
}

fn serde_json_params(ck: &Checkpoint, cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "config_digest": ck.config_digest,
        "source": ck.source,
        "solver_step": cfg.eval.solver_step,
    })
}

/// Paired Monte Carlo evaluation of a checkpoint against the teacher it
/// was configured with; writes `report.json` and the exit-rate and
/// evacuation-time CSVs into `out_dir`.
///
/// # Safety
/// `cfg` and `ck` must be live handles; `out_dir` a valid NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn co_evaluate(
    cfg: *const CoConfig,
    ck: *const CoCheckpoint,
    out_dir: *const c_char,
) -> CoStatus {
    guarded(|| {
        if cfg.is_null() {
            return arg_error("cfg is null");
        }
        if ck.is_null() {
            return arg_error("ck is null");
        }
        let dir = match cstr(out_dir, "out_dir") {
            Ok(s) => Path::new(s),
            Err(st) => return st,
        };
        let cfg = &(*cfg).0;
        let result = std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))
            .and_then(|()| preset::evaluate_checkpoint(cfg, &(*ck).0))
            .and_then(|outcome| {
                metrics::save_json(&outcome.evaluation, &dir.join("report.json"))?;
                preset::write_eval_artifacts(dir, &outcome.evaluation)
            });
        match result {
            Ok(()) => CoStatus::Ok,
            Err(e) => fail(e),
        }
    })
}
