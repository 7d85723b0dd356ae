//! End-to-end pipelines (generate data, train, evaluate) plus the packaged
//! benchmark presets the CLI and acceptance suite run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::dataset::{self, GenSpec, Manifest, ManifestEntry, WindowPair, MANIFEST_FORMAT};
use crate::error::{Error, Result};
use crate::forcefield::Checkpoint;
use crate::metrics::{
    self, EvalOutcome, ModelComparison, PredictionAde, SimModel,
};
use crate::orca;
use crate::sfm;
use crate::solver::{IntegratorConfig, Method};
use crate::train::{self, EpochStats};
use crate::trajectory::{self, TrajectoryMeta, TRAJECTORY_FORMAT};

/// Forecast length for the held-out prediction check, s.
pub const PREDICTION_HORIZON: f64 = 2.0;
/// Forecast anchors are placed every this many recorded states.
pub const PREDICTION_ANCHOR_STRIDE: usize = 5;
/// The learned model must beat the constant-velocity baseline by this
/// factor on held-out forecasts.
pub const ADE_BASELINE_FACTOR: f64 = 0.5;
/// Transfer limit on the exit-rate curve gap for a social-force teacher.
pub const ICE_GAP_LIMIT_SFM: f64 = 0.2;
/// Transfer limit for the velocity-obstacle teacher; its discrete
/// avoidance rules are harder to match at higher density.
pub const ICE_GAP_LIMIT_ORCA: f64 = 0.3;
/// Evaluation runs when `--full` is passed; the default counts in the
/// preset files are desk scale.
pub const FULL_SCALE_EVAL_RUNS: usize = 200;

pub const PRESET_NAMES: [&str; 4] = [
    "sfm-n5",
    "sfm-n20-transfer",
    "orca-n5",
    "orca-n20-transfer",
];

pub fn preset_toml(name: &str) -> Result<&'static str> {
    match name {
        "sfm-n5" => Ok(include_str!("../presets/sfm-n5.toml")),
        "sfm-n20-transfer" => Ok(include_str!("../presets/sfm-n20-transfer.toml")),
        "orca-n5" => Ok(include_str!("../presets/orca-n5.toml")),
        "orca-n20-transfer" => Ok(include_str!("../presets/orca-n20-transfer.toml")),
        _ => Err(Error::InvalidConfig(format!(
            "unknown preset '{name}'; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

pub fn preset_config(name: &str) -> Result<RunConfig> {
    let cfg = RunConfig::from_toml(preset_toml(name)?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn source_label(source: DataSource) -> &'static str {
    match source {
        DataSource::Sfm => "sfm",
        DataSource::Orca => "orca",
    }
}

fn data_gen_spec(cfg: &RunConfig) -> Result<GenSpec> {
    Ok(GenSpec {
        n_agents: cfg.data.n_agents,
        n_runs: cfg.data.n_runs,
        seed: cfg.seed,
        t_max: cfg.data.t_max,
        record_every: cfg.data_record_every()?,
        spawn_mode: cfg.data.spawn_mode,
        min_separation: cfg.data.min_separation,
    })
}

/// Simulates the configured teacher and writes one trajectory CSV per run
/// plus `manifest.json` into `dir`. Returns the manifest path.
pub fn generate_data(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let scene = cfg.scene.build()?;
    let gen = data_gen_spec(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let label = source_label(cfg.data.source);
    let (trajectories, params_json, step_size) = match cfg.data.source {
        DataSource::Sfm => {
            let icfg = IntegratorConfig::new(Method::Rk4, cfg.sfm.step)?;
            let trajs = sfm::generate_dataset(&scene, &cfg.sfm, &gen, icfg)?;
            let params = serde_json::to_value(&cfg.sfm)
                .map_err(|e| Error::Report(e.to_string()))?;
            (trajs, params, cfg.sfm.step)
        }
        DataSource::Orca => {
            let trajs = orca::generate_dataset(&scene, &cfg.orca, &gen)?;
            let params = serde_json::to_value(&cfg.orca)
                .map_err(|e| Error::Report(e.to_string()))?;
            (trajs, params, cfg.orca.step)
        }
    };

    let mut files = Vec::with_capacity(trajectories.len());
    for (run, traj) in trajectories.iter().enumerate() {
        let file = format!("run_{run:03}.csv");
        let seed = cfg.seed.wrapping_add(run as u64);
        let meta = TrajectoryMeta {
            format: TRAJECTORY_FORMAT.into(),
            model: label.into(),
            seed,
            n_agents: cfg.data.n_agents,
            record_interval: cfg.data.record_interval,
            step_size,
            scene: scene.clone(),
            params: params_json.clone(),
            exit_times: traj.exit_times.clone(),
            exit_steps: traj.exit_steps.clone(),
        };
        trajectory::save(traj, &meta, &dir.join(&file))?;
        files.push(ManifestEntry {
            file,
            seed,
            n_agents: cfg.data.n_agents,
            n_records: traj.snapshots.len(),
        });
    }

    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        source: label.into(),
        seed: cfg.seed,
        config_digest: cfg.data_digest(),
        n_agents: cfg.data.n_agents,
        record_interval: cfg.data.record_interval,
        files,
    };
    let path = dir.join("manifest.json");
    dataset::write_manifest(&path, &manifest)?;
    Ok(path)
}

/// Loads every trajectory under a manifest and slices it into training
/// windows. Digest checking is left to the caller: the manifest's
/// `config_digest` is returned alongside.
pub fn load_windows(cfg: &RunConfig, manifest_path: &Path) -> Result<(Vec<WindowPair>, Manifest)> {
    let (trajectories, manifest) = dataset::load_trajectories(manifest_path)?;
    let mut windows = Vec::new();
    for traj in &trajectories {
        windows.extend(dataset::slice_windows(
            traj,
            cfg.data.window_steps,
            cfg.data.stride,
        ));
    }
    if windows.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "dataset at {} produced no training windows; every window \
             crosses an exit or the runs are too short",
            manifest_path.display()
        )));
    }
    Ok((windows, manifest))
}

/// Fits the force field to the window set and packages the result with its
/// provenance digest.
pub fn train_model(
    cfg: &RunConfig,
    windows: &[WindowPair],
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let scene = cfg.scene.build()?;
    let field = cfg.build_field()?;
    let theta0 = field.init_params(cfg.seed);
    let tcfg = cfg.train_config();
    let outcome = train::train(&field, theta0, &scene, windows, &tcfg, on_epoch)?;

    let mut ck = Checkpoint::new(field, outcome.theta);
    ck.config_digest = Some(cfg.training_digest());
    ck.source = Some(source_label(cfg.data.source).into());
    ck.epochs = Some(outcome.history.len());
    ck.final_loss = outcome.history.last().map(|s| s.mean_loss);
    Ok((ck, outcome.history))
}

/// Paired evaluation of a checkpoint against the teacher it was fitted to.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub learned: metrics::EvalReport,
    pub reference: metrics::EvalReport,
    pub comparison: ModelComparison,
    /// Present when the evaluation crowd size matches the training data,
    /// where short-horizon forecasts against the teacher are meaningful
    /// sample by sample.
    pub prediction: Option<PredictionAde>,
}

/// Holds the raw trajectories too, which `Evaluation` drops for reports.
pub struct EvaluationOutcome {
    pub evaluation: Evaluation,
    pub learned: EvalOutcome,
    pub reference: EvalOutcome,
}

/// Runs paired Monte Carlo rollouts (shared initial states per run index)
/// for the teacher and the checkpoint, compares the summaries, and when the
/// crowd size matches training also scores held-out forecasts.
pub fn evaluate_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<EvaluationOutcome> {
    cfg.validate()?;
    ck.validate()?;
    let scene = cfg.scene.build()?;
    let eval_seed = cfg.seed.wrapping_add(cfg.eval.seed_offset);

    let (ref_model, ref_step) = match cfg.data.source {
        DataSource::Sfm => (SimModel::Sfm(&cfg.sfm), cfg.sfm.step),
        DataSource::Orca => (SimModel::Orca(&cfg.orca), cfg.orca.step),
    };
    let learned_model = SimModel::Learned {
        field: &ck.field,
        theta: &ck.theta,
        step: cfg.eval.solver_step,
    };

    let mut gen = GenSpec {
        n_agents: cfg.eval.n_agents,
        n_runs: cfg.eval.n_runs,
        seed: eval_seed,
        t_max: cfg.eval.t_max,
        record_every: cfg.eval_record_every(ref_step)?,
        spawn_mode: cfg.eval.spawn_mode,
        min_separation: cfg.eval.min_separation,
    };
    let reference = metrics::monte_carlo_eval(&scene, &ref_model, &gen)?;
    gen.record_every = cfg.eval_record_every(cfg.eval.solver_step)?;
    let learned = metrics::monte_carlo_eval(&scene, &learned_model, &gen)?;

    let comparison = metrics::compare_models(&learned, &reference)?;
    let prediction = if cfg.eval.n_agents == cfg.data.n_agents
        && cfg.eval.t_max > PREDICTION_HORIZON
    {
        Some(metrics::prediction_ade(
            &scene,
            &reference.trajectories,
            &learned_model,
            PREDICTION_HORIZON,
            PREDICTION_ANCHOR_STRIDE,
        )?)
    } else {
        None
    };

    Ok(EvaluationOutcome {
        evaluation: Evaluation {
            learned: learned.report.clone(),
            reference: reference.report.clone(),
            comparison,
            prediction,
        },
        learned,
        reference,
    })
}

/// Per-epoch training log as CSV.
pub fn write_loss_log(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut body = String::from("epoch,mean_loss,n_samples,n_skipped\n");
    for s in history {
        body.push_str(&format!(
            "{},{:.9},{},{}\n",
            s.epoch, s.mean_loss, s.n_samples, s.n_skipped
        ));
    }
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Exit-rate and evacuation-time CSVs for a paired evaluation.
pub fn write_eval_artifacts(dir: &Path, eval: &Evaluation) -> Result<()> {
    metrics::save_ice_csv(&[&eval.learned, &eval.reference], &dir.join("ice.csv"))?;
    metrics::save_evacuation_csv(&eval.learned, &dir.join("evac_learned.csv"))?;
    metrics::save_evacuation_csv(&eval.reference, &dir.join("evac_reference.csv"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetReport {
    pub preset: String,
    pub seed: u64,
    pub training_digest: String,
    /// Whether a reused checkpoint matched this preset's training digest.
    pub checkpoint_digest_match: Option<bool>,
    pub n_windows: Option<usize>,
    pub loss_history: Vec<f64>,
    pub evaluation: Evaluation,
    pub checks: Vec<Check>,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct PresetOptions {
    /// Scale evaluation up to [`FULL_SCALE_EVAL_RUNS`] Monte Carlo runs.
    pub full_scale: bool,
    pub seed_override: Option<u64>,
    /// Skip data generation and training, loading this checkpoint instead.
    pub reuse_checkpoint: Option<PathBuf>,
    /// Overrides the preset's `output_dir`.
    pub out_dir: Option<PathBuf>,
}

/// Builds the pass/fail gates for an evaluation: a forecast-accuracy gate
/// whenever forecasts were scored, an exit-rate gap gate on transfer runs,
/// and a histogram-shape gate when the transfer uses the two-band spawner
/// with a social-force teacher.
pub fn build_checks(cfg: &RunConfig, eval: &Evaluation) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(pred) = &eval.prediction {
        let limit = ADE_BASELINE_FACTOR * pred.baseline_ade;
        checks.push(Check {
            name: "forecast-beats-drift".into(),
            pass: pred.model_ade <= limit,
            detail: format!(
                "{}s-forecast ADE {:.4} m vs limit {:.4} m ({} x drift baseline {:.4} m, {} points)",
                pred.horizon, pred.model_ade, limit, ADE_BASELINE_FACTOR,
                pred.baseline_ade, pred.n_points
            ),
        });
    }
    let transfer = cfg.eval.n_agents != cfg.data.n_agents;
    if transfer {
        let limit = match cfg.data.source {
            DataSource::Sfm => ICE_GAP_LIMIT_SFM,
            DataSource::Orca => ICE_GAP_LIMIT_ORCA,
        };
        checks.push(Check {
            name: "exit-rate-gap".into(),
            pass: eval.comparison.max_ice_gap <= limit,
            detail: format!(
                "max exit-rate curve gap {:.4} vs limit {limit}",
                eval.comparison.max_ice_gap
            ),
        });
        if cfg.data.source == DataSource::Sfm
            && cfg.eval.spawn_mode == crate::scene::SpawnMode::BimodalClusters
        {
            let bimodal = eval.comparison.bimodal_a == Some(true);
            checks.push(Check {
                name: "evac-time-bimodal".into(),
                pass: bimodal,
                detail: format!(
                    "learned evacuation-time histogram bimodal: {bimodal} (teacher: {:?})",
                    eval.comparison.bimodal_b
                ),
            });
        }
    }
    checks
}

/// Runs a packaged preset end to end: generate teacher data, train (or
/// reuse) a checkpoint, evaluate, write artifacts under the output
/// directory, and gate the result. `log` receives one line per stage.
pub fn run_preset(
    name: &str,
    opts: &PresetOptions,
    log: impl FnMut(&str),
) -> Result<PresetReport> {
    run_pipeline(preset_config(name)?, name, opts, log)
}

/// Same pipeline for an arbitrary config.
pub fn run_pipeline(
    mut cfg: RunConfig,
    label: &str,
    opts: &PresetOptions,
    mut log: impl FnMut(&str),
) -> Result<PresetReport> {
    cfg.validate()?;
    if let Some(seed) = opts.seed_override {
        cfg.seed = seed;
    }
    if opts.full_scale {
        cfg.eval.n_runs = FULL_SCALE_EVAL_RUNS;
    }
    let out_dir = opts
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut digest_match = None;
    let mut n_windows = None;
    let mut loss_history = Vec::new();

    let ck = match &opts.reuse_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let ok = ck.config_digest.as_deref() == Some(cfg.training_digest().as_str());
            digest_match = Some(ok);
            log(&format!(
                "reusing checkpoint {} (digest match: {ok})",
                path.display()
            ));
            ck
        }
        None => {
            let data_dir = out_dir.join("data");
            log(&format!(
                "generating {} x {}-agent runs with the {} teacher",
                cfg.data.n_runs,
                cfg.data.n_agents,
                source_label(cfg.data.source)
            ));
            let manifest_path = generate_data(&cfg, &data_dir)?;
            let (windows, _) = load_windows(&cfg, &manifest_path)?;
            n_windows = Some(windows.len());
            log(&format!(
                "training on {} windows for {} epochs",
                windows.len(),
                cfg.train.epochs
            ));
            let (ck, history) = train_model(&cfg, &windows, |s| {
                log(&format!(
                    "epoch {:>3}: loss {:.6} ({} samples, {} skipped)",
                    s.epoch, s.mean_loss, s.n_samples, s.n_skipped
                ));
            })?;
            loss_history = history.iter().map(|s| s.mean_loss).collect();
            write_loss_log(&out_dir.join("loss_log.csv"), &history)?;
            let ck_path = out_dir.join("checkpoint.json");
            ck.save(&ck_path)?;
            log(&format!("checkpoint written to {}", ck_path.display()));
            ck
        }
    };

    log(&format!(
        "evaluating {} paired runs at n = {}",
        cfg.eval.n_runs, cfg.eval.n_agents
    ));
    let outcome = evaluate_checkpoint(&cfg, &ck)?;
    let checks = build_checks(&cfg, &outcome.evaluation);
    let passed = checks.iter().all(|c| c.pass);

    let report = PresetReport {
        preset: label.into(),
        seed: cfg.seed,
        training_digest: cfg.training_digest(),
        checkpoint_digest_match: digest_match,
        n_windows,
        loss_history,
        evaluation: outcome.evaluation,
        checks,
        passed,
    };

    metrics::save_json(&report, &out_dir.join("report.json"))?;
    write_eval_artifacts(&out_dir, &report.evaluation)?;
    for check in &report.checks {
        log(&format!(
            "[{}] {}: {}",
            if check.pass { "pass" } else { "FAIL" },
            check.name,
            check.detail
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.data.n_runs = 2;
        cfg.data.n_agents = 3;
        cfg.data.t_max = 0.4;
        cfg.data.stride = 5;
        cfg.model.hidden = vec![8];
        cfg.train.epochs = 2;
        cfg.train.batch_size = 8;
        cfg.eval.n_runs = 2;
        cfg.eval.n_agents = 3;
        cfg.eval.t_max = 0.4;
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn all_presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let cfg = preset_config(name).unwrap();
            assert!(cfg.data.n_runs >= 20, "{name} trains on too few runs");
            assert_eq!(cfg.train.epochs, 30, "{name} epoch count");
        }
        assert!(preset_config("nope").is_err());
    }

    #[test]
    fn transfer_presets_share_training_digest_with_base() {
        let base = preset_config("sfm-n5").unwrap();
        let transfer = preset_config("sfm-n20-transfer").unwrap();
        assert_eq!(base.training_digest(), transfer.training_digest());
        assert_ne!(base.digest(), transfer.digest());

        let orca = preset_config("orca-n5").unwrap();
        assert_ne!(base.training_digest(), orca.training_digest());
    }

    #[test]
    fn generate_data_writes_loadable_manifest() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let manifest_path = generate_data(&cfg, dir.path()).unwrap();
        let (windows, manifest) = load_windows(&cfg, &manifest_path).unwrap();

        assert_eq!(manifest.files.len(), 2);
        assert_eq!(manifest.config_digest, cfg.data_digest());
        assert_eq!(manifest.source, "sfm");
        assert!(!windows.is_empty());
        let span = cfg.data.window_steps as f64 * cfg.data.record_interval;
        for w in &windows {
            assert!((w.dt_window - span).abs() < 1e-9);
            assert_eq!(w.z0.len(), 3);
        }
    }

    #[test]
    fn pipeline_trains_and_evaluates_a_tiny_run() {
        let cfg = tiny_config();
        let dir = tempdir().unwrap();
        let manifest_path = generate_data(&cfg, dir.path()).unwrap();
        let (windows, _) = load_windows(&cfg, &manifest_path).unwrap();

        let mut epochs_seen = 0;
        let (ck, history) = train_model(&cfg, &windows, |_| epochs_seen += 1).unwrap();
        assert_eq!(epochs_seen, 2);
        assert_eq!(history.len(), 2);
        assert_eq!(ck.config_digest.as_deref(), Some(cfg.training_digest().as_str()));
        assert_eq!(ck.source.as_deref(), Some("sfm"));
        assert!(ck.final_loss.unwrap().is_finite());

        let outcome = evaluate_checkpoint(&cfg, &ck).unwrap();
        let eval = &outcome.evaluation;
        assert_eq!(eval.learned.model, "learned");
        assert_eq!(eval.reference.model, "sfm");
        assert_eq!(eval.learned.n_runs, 2);
        let pred = eval.prediction.as_ref();
        assert!(pred.is_none(), "0.4 s runs cannot hold a 2 s forecast");
    }

    #[test]
    fn prediction_requires_matching_crowd_size() {
        let mut cfg = tiny_config();
        cfg.eval.n_agents = 5;
        let dir = tempdir().unwrap();
        let manifest_path = generate_data(&cfg, dir.path()).unwrap();
        let (windows, _) = load_windows(&cfg, &manifest_path).unwrap();
        let (ck, _) = train_model(&cfg, &windows, |_| {}).unwrap();
        let outcome = evaluate_checkpoint(&cfg, &ck).unwrap();
        assert!(outcome.evaluation.prediction.is_none());
        assert_eq!(outcome.evaluation.learned.n_agents, 5);
    }

    #[test]
    fn checks_reflect_preset_shape() {
        let base = preset_config("sfm-n5").unwrap();
        let transfer = preset_config("sfm-n20-transfer").unwrap();
        let orca_transfer = preset_config("orca-n20-transfer").unwrap();

        let eval = Evaluation {
            learned: dummy_report("learned"),
            reference: dummy_report("sfm"),
            comparison: ModelComparison {
                model_a: "learned".into(),
                model_b: "sfm".into(),
                max_ice_gap: 0.15,
                w1_evacuation: None,
                paired_ade: None,
                bimodal_a: Some(true),
                bimodal_b: Some(true),
            },
            prediction: Some(PredictionAde {
                model_ade: 0.05,
                baseline_ade: 0.2,
                horizon: 2.0,
                n_points: 100,
            }),
        };

        let base_checks = build_checks(&base, &eval);
        assert_eq!(base_checks.len(), 1);
        assert_eq!(base_checks[0].name, "forecast-beats-drift");
        assert!(base_checks[0].pass);

        let mut no_pred = eval.clone();
        no_pred.prediction = None;
        let transfer_checks = build_checks(&transfer, &no_pred);
        let names: Vec<_> = transfer_checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["exit-rate-gap", "evac-time-bimodal"]);
        assert!(transfer_checks.iter().all(|c| c.pass));

        let orca_checks = build_checks(&orca_transfer, &no_pred);
        assert_eq!(orca_checks.len(), 1);
        assert_eq!(orca_checks[0].name, "exit-rate-gap");

        let mut wide = no_pred.clone();
        wide.comparison.max_ice_gap = 0.25;
        assert!(!build_checks(&transfer, &wide)[0].pass);
        assert!(build_checks(&orca_transfer, &wide)[0].pass);
    }

    fn dummy_report(model: &str) -> metrics::EvalReport {
        metrics::EvalReport {
            model: model.into(),
            n_runs: 0,
            n_agents: 0,
            t_max: 1.0,
            evacuation_times: vec![],
            pooled_exit_times: vec![],
            ice: vec![],
            mean_evacuation_time: None,
            completion_rate: 0.0,
        }
    }

    #[test]
    fn forecasts_score_against_reference_trajectories() {
        let cfg = tiny_config();
        let scene = cfg.scene.build().unwrap();
        let gen = GenSpec {
            n_agents: 3,
            n_runs: 2,
            seed: 5,
            t_max: 4.0,
            record_every: 100,
            spawn_mode: cfg.data.spawn_mode,
            min_separation: cfg.data.min_separation,
        };
        let model = SimModel::Sfm(&cfg.sfm);
        let refs = metrics::monte_carlo_eval(&scene, &model, &gen).unwrap();

        // The teacher forecasting itself is exact up to early-exit tail
        // handling, and the drift baseline is not.
        let pred =
            metrics::prediction_ade(&scene, &refs.trajectories, &model, 2.0, 5).unwrap();
        assert!(pred.n_points > 0);
        assert!(
            pred.model_ade < 1e-6,
            "self-forecast ADE {} should be ~0",
            pred.model_ade
        );
        assert!(pred.baseline_ade > pred.model_ade);
    }
}
