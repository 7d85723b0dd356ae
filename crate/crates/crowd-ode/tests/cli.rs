//! Drives the compiled binary through the command lifecycle on a tiny
//! configuration.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

const BIN: &str = env!("CARGO_BIN_EXE_crowd-ode");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("binary launches")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed.\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    let body = format!(
        r#"
seed = 3
output_dir = "{}"

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
"#,
        dir.join("out").display()
    );
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn lifecycle_produces_expected_artifacts() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_root = dir.path().join("out");
    let cfg = config.to_str().unwrap();

    let gen = run(&["gen-data", "--config", cfg]);
    assert_success(&gen, "gen-data");
    let manifest = out_root.join("data/manifest.json");
    assert!(manifest.exists());
    assert!(out_root.join("data/run_000.csv").exists());
    assert!(out_root.join("data/run_001.csv").exists());

    let manifest_arg = manifest.to_str().unwrap().to_owned();
    let train = run(&["train", "--config", cfg, "--data", &manifest_arg]);
    assert_success(&train, "train");
    let checkpoint = out_root.join("train/checkpoint.json");
    assert!(checkpoint.exists());
    let loss_log = std::fs::read_to_string(out_root.join("train/loss_log.csv")).unwrap();
    assert_eq!(loss_log.lines().count(), 3, "header plus one row per epoch");
    assert!(loss_log.starts_with("epoch,mean_loss"));
    assert!(!String::from_utf8_lossy(&train.stderr).contains("warning"));

    let ck_arg = checkpoint.to_str().unwrap().to_owned();
    let sim = run(&[
        "simulate",
        "--config",
        cfg,
        "--checkpoint",
        &ck_arg,
        "--n-agents",
        "7",
        "--runs",
        "2",
    ]);
    assert_success(&sim, "simulate");
    let (traj, meta) = crowd_ode::trajectory::load(&out_root.join("sim/run_001.csv")).unwrap();
    assert_eq!(meta.n_agents, 7, "crowd size decoupled from training size");
    assert_eq!(meta.model, "learned");
    assert!(!traj.snapshots.is_empty());

    let eval = run(&["evaluate", "--config", cfg, "--checkpoint", &ck_arg]);
    assert_success(&eval, "evaluate");
    for file in ["report.json", "ice.csv", "evac_learned.csv", "evac_reference.csv"] {
        assert!(out_root.join("eval").join(file).exists(), "missing {file}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_root.join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["reference"], "sfm");
    assert_eq!(report["cross_evaluation"], false);

    let cross = run(&[
        "evaluate",
        "--config",
        cfg,
        "--checkpoint",
        &ck_arg,
        "--reference",
        "orca",
    ]);
    assert_success(&cross, "cross evaluate");
    assert!(
        String::from_utf8_lossy(&cross.stderr).contains("warning"),
        "cross-evaluation should warn about the digest"
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_root.join("eval/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["cross_evaluation"], true);
}

#[test]
fn gen_data_is_reproducible_byte_for_byte() {
    let dir = tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let cfg = config.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    for out in [&a, &b] {
        let r = run(&["gen-data", "--config", cfg, "--out", out.to_str().unwrap()]);
        assert_success(&r, "gen-data");
    }
    for file in ["manifest.json", "run_000.csv", "run_001.csv"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical reruns");
    }
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "bogus_key = 1\n").unwrap();

    let invalid = run(&["gen-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("bogus_key"));

    let missing = dir.path().join("missing.toml");
    let io = run(&["gen-data", "--config", missing.to_str().unwrap()]);
    assert_eq!(io.status.code(), Some(3));

    let unknown = run(&["run-preset", "nope"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("sfm-n5"));

    let listed = run(&["list-presets"]);
    assert_success(&listed, "list-presets");
    assert!(String::from_utf8_lossy(&listed.stdout).contains("orca-n20-transfer"));
}
