//! Exercises the C ABI end to end from Rust: tiny dataset, training,
//! simulate-to-file, evaluation, and the error paths.

use std::ffi::{CStr, CString};
use std::ptr;

use crowd_ode_ffi::*;
use tempfile::tempdir;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(co_last_error()) }
        .to_string_lossy()
        .into_owned()
}

const TINY_TOML: &str = r#"
seed = 3
output_dir = "unused"

[data]
n_agents = 3
n_runs = 2
t_max = 0.5
stride = 5

[model]
hidden = [8]

[train]
epochs = 2
batch_size = 8

[eval]
n_runs = 2
n_agents = 3
t_max = 0.5
"#;

#[test]
fn pipeline_round_trip_through_the_c_abi() {
    let dir = tempdir().unwrap();
    let data_dir = c(dir.path().join("data").to_str().unwrap());
    let ck_path = c(dir.path().join("model.json").to_str().unwrap());
    let sim_path = c(dir.path().join("sim.csv").to_str().unwrap());
    let eval_dir = c(dir.path().join("eval").to_str().unwrap());
    let toml = c(TINY_TOML);

    unsafe {
        let mut cfg: *mut CoConfig = ptr::null_mut();
        assert_eq!(co_config_from_toml(toml.as_ptr(), &mut cfg), CoStatus::Ok);
        assert!(!cfg.is_null());

        let mut digest = [0i8; 65];
        assert_eq!(
            co_config_digest(cfg, digest.as_mut_ptr() as *mut _, digest.len()),
            CoStatus::Ok
        );
        let digest = CStr::from_ptr(digest.as_ptr() as *const _)
            .to_str()
            .unwrap()
            .to_owned();
        assert_eq!(digest.len(), 64);

        assert_eq!(co_config_set_seed(cfg, 11), CoStatus::Ok);
        let mut digest2 = [0i8; 65];
        co_config_digest(cfg, digest2.as_mut_ptr() as *mut _, digest2.len());
        assert_ne!(
            CStr::from_ptr(digest2.as_ptr() as *const _).to_bytes(),
            digest.as_bytes(),
            "seed participates in the digest"
        );

        assert_eq!(co_generate_data(cfg, data_dir.as_ptr()), CoStatus::Ok);
        let manifest = dir.path().join("data/manifest.json");
        assert!(manifest.exists());

        let manifest_c = c(manifest.to_str().unwrap());
        assert_eq!(
            co_train(cfg, manifest_c.as_ptr(), ck_path.as_ptr()),
            CoStatus::Ok
        );

        let mut ck: *mut CoCheckpoint = ptr::null_mut();
        assert_eq!(co_checkpoint_open(ck_path.as_ptr(), &mut ck), CoStatus::Ok);

        let mut evac = 0.0f64;
        assert_eq!(
            co_simulate_to_file(cfg, ck, 6, 99, sim_path.as_ptr(), &mut evac),
            CoStatus::Ok
        );
        assert!(
            evac.is_nan(),
            "nobody evacuates a 10 m room in 0.5 s, got {evac}"
        );
        let (traj, meta) = crowd_ode::trajectory::load(&dir.path().join("sim.csv")).unwrap();
        assert_eq!(meta.n_agents, 6);
        assert!(!traj.snapshots.is_empty());

        assert_eq!(co_evaluate(cfg, ck, eval_dir.as_ptr()), CoStatus::Ok);
        assert!(dir.path().join("eval/report.json").exists());
        assert!(dir.path().join("eval/ice.csv").exists());

        co_checkpoint_free(ck);
        co_config_free(cfg);
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        let mut cfg: *mut CoConfig = ptr::null_mut();

        let bad = c("definitely not toml [");
        assert_eq!(
            co_config_from_toml(bad.as_ptr(), &mut cfg),
            CoStatus::InvalidConfig
        );
        assert!(last_error().contains("invalid config"));

        let missing = c("/nonexistent/config.toml");
        assert_eq!(
            co_config_from_file(missing.as_ptr(), &mut cfg),
            CoStatus::Io
        );

        assert_eq!(
            co_config_from_toml(ptr::null(), &mut cfg),
            CoStatus::Argument
        );
        assert!(last_error().contains("toml is null"));

        assert_eq!(
            co_generate_data(ptr::null(), c("/tmp").as_ptr()),
            CoStatus::Argument
        );

        let mut ck: *mut CoCheckpoint = ptr::null_mut();
        assert_eq!(
            co_checkpoint_open(missing.as_ptr(), &mut ck),
            CoStatus::Io
        );

        let name = c("sfm-n5");
        assert_eq!(co_config_preset(name.as_ptr(), &mut cfg), CoStatus::Ok);
        co_config_free(cfg);

        let nope = c("nope");
        assert_eq!(
            co_config_preset(nope.as_ptr(), &mut cfg),
            CoStatus::InvalidConfig
        );
        assert!(last_error().contains("unknown preset"));

        assert!(!co_version().is_null());
    }
}

#[test]
fn committed_header_tracks_the_exported_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/crowd_ode.h"
    ))
    .expect("committed header exists");
    for symbol in [
        "co_last_error",
        "co_version",
        "co_config_from_file",
        "co_config_from_toml",
        "co_config_preset",
        "co_config_set_seed",
        "co_config_digest",
        "co_config_free",
        "co_generate_data",
        "co_train",
        "co_checkpoint_open",
        "co_checkpoint_free",
        "co_simulate_to_file",
        "co_evaluate",
        "CO_STATUS_ARGUMENT",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
