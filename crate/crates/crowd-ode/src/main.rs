use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crowd_ode::config::{DataSource, RunConfig};
use crowd_ode::error::{Error, Result};
use crowd_ode::forcefield::Checkpoint;
use crowd_ode::metrics::{self, SimModel};
use crowd_ode::preset::{self, PresetOptions};
use crowd_ode::trajectory::{self, TrajectoryMeta, TRAJECTORY_FORMAT};

#[derive(Parser)]
#[command(
    name = "crowd-ode",
    version,
    about = "Crowd simulators (social force, velocity obstacles) and a learned continuous-time crowd model"
)]
struct Cli {
    /// Cap the worker thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured teacher model and write a trajectory dataset.
    GenData(GenDataArgs),
    /// Fit the force field to a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Roll out a trained checkpoint and write trajectories.
    Simulate(SimulateArgs),
    /// Paired Monte Carlo comparison of a checkpoint against a reference
    /// simulator.
    Evaluate(EvaluateArgs),
    /// Run a packaged experiment preset end to end and gate its thresholds.
    RunPreset(RunPresetArgs),
    /// List the packaged presets.
    ListPresets,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to a subdirectory of the config's
    /// output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's master seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Sfm,
    Orca,
}

impl From<SourceArg> for DataSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Sfm => DataSource::Sfm,
            SourceArg::Orca => DataSource::Orca,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the config's data source.
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset manifest written by gen-data.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Crowd size; defaults to the config's eval section.
    #[arg(long)]
    n_agents: Option<usize>,
    /// Number of rollouts to write.
    #[arg(long, default_value_t = 1)]
    runs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference simulator; defaults to the config's data source. Passing
    /// the other one cross-evaluates and is flagged in the report.
    #[arg(long, value_enum)]
    reference: Option<SourceArg>,
}

#[derive(Args)]
struct RunPresetArgs {
    /// Preset name; see list-presets.
    name: String,
    /// Output directory; defaults to the preset's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the preset's master seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Evaluate with the full 200 Monte Carlo runs instead of the desk
    /// default.
    #[arg(long)]
    full: bool,
    /// Reuse an existing checkpoint instead of generating data and
    /// training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::RunPreset(args) => cmd_run_preset(args),
        Command::ListPresets => {
            for name in preset::PRESET_NAMES {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, cfg: &RunConfig, sub: &str) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(sub))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn cmd_gen_data(args: GenDataArgs) -> Result<u8> {
    let mut cfg = load_config(&args.common)?;
    if let Some(source) = args.source {
        cfg.data.source = source.into();
    }
    let dir = out_dir(&args.common, &cfg, "data");
    let manifest_path = preset::generate_data(&cfg, &dir)?;
    println!(
        "wrote {} runs and {}",
        cfg.data.n_runs,
        manifest_path.display()
    );
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let cfg = load_config(&args.common)?;
    let (windows, manifest) = preset::load_windows(&cfg, &args.data)?;
    if manifest.config_digest != cfg.data_digest() {
        eprintln!(
            "warning: dataset digest {} does not match this config's data digest {}",
            manifest.config_digest,
            cfg.data_digest()
        );
    }
    let dir = out_dir(&args.common, &cfg, "train");
    ensure_dir(&dir)?;

    println!(
        "training on {} windows from {} runs",
        windows.len(),
        manifest.files.len()
    );
    let (ck, history) = preset::train_model(&cfg, &windows, |s| {
        println!(
            "epoch {:>3}: loss {:.6} ({} samples, {} skipped)",
            s.epoch, s.mean_loss, s.n_samples, s.n_skipped
        );
    })?;
    preset::write_loss_log(&dir.join("loss_log.csv"), &history)?;
    let ck_path = dir.join("checkpoint.json");
    ck.save(&ck_path)?;
    println!("checkpoint written to {}", ck_path.display());
    Ok(0)
}

fn load_checkpoint_with_warning(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    match &ck.config_digest {
        Some(d) if *d != cfg.training_digest() => eprintln!(
            "warning: checkpoint digest {d} does not match this config's training digest {}",
            cfg.training_digest()
        ),
        None => eprintln!("warning: checkpoint carries no config digest"),
        _ => {}
    }
    Ok(ck)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let cfg = load_config(&args.common)?;
    if args.runs == 0 {
        return Err(Error::InvalidConfig("--runs must be >= 1".into()));
    }
    let ck = load_checkpoint_with_warning(&args.checkpoint, &cfg)?;
    ck.validate()?;
    let scene = cfg.scene.build()?;
    let n_agents = args.n_agents.unwrap_or(cfg.eval.n_agents);
    if n_agents == 0 {
        return Err(Error::InvalidConfig("--n-agents must be >= 1".into()));
    }
    let dir = out_dir(&args.common, &cfg, "sim");
    ensure_dir(&dir)?;

    let model = SimModel::Learned {
        field: &ck.field,
        theta: &ck.theta,
        step: cfg.eval.solver_step,
    };
    let record_every = cfg.eval_record_every(cfg.eval.solver_step)?;
    let params = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "config_digest": ck.config_digest,
        "solver_step": cfg.eval.solver_step,
    });
    for run in 0..args.runs {
        let seed = cfg
            .seed
            .wrapping_add(cfg.eval.seed_offset)
            .wrapping_add(run as u64);
        let z0 = scene.sample_initial_state(
            n_agents,
            cfg.eval.spawn_mode,
            cfg.eval.min_separation,
            seed,
        )?;
        let traj = model.rollout(&scene, &z0, cfg.eval.t_max, record_every)?;
        let meta = TrajectoryMeta {
            format: TRAJECTORY_FORMAT.into(),
            model: "learned".into(),
            seed,
            n_agents,
            record_interval: cfg.eval.record_interval,
            step_size: cfg.eval.solver_step,
            scene: scene.clone(),
            params: params.clone(),
            exit_times: traj.exit_times.clone(),
            exit_steps: traj.exit_steps.clone(),
        };
        let path = dir.join(format!("run_{run:03}.csv"));
        trajectory::save(&traj, &meta, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

#[derive(Serialize)]
struct EvaluateArtifact {
    config_digest: String,
    reference: String,
    checkpoint_source: Option<String>,
    /// True when the reference differs from the simulator the checkpoint
    /// was trained on.
    cross_evaluation: bool,
    evaluation: preset::Evaluation,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<u8> {
    let mut cfg = load_config(&args.common)?;
    if let Some(reference) = args.reference {
        cfg.data.source = reference.into();
    }
    let ck = load_checkpoint_with_warning(&args.checkpoint, &cfg)?;
    let dir = out_dir(&args.common, &cfg, "eval");
    ensure_dir(&dir)?;

    let outcome = preset::evaluate_checkpoint(&cfg, &ck)?;
    let reference_label = outcome.evaluation.reference.model.clone();
    let artifact = EvaluateArtifact {
        config_digest: cfg.digest(),
        reference: reference_label.clone(),
        checkpoint_source: ck.source.clone(),
        cross_evaluation: ck.source.as_deref() != Some(reference_label.as_str()),
        evaluation: outcome.evaluation,
    };
    metrics::save_json(&artifact, &dir.join("report.json"))?;
    preset::write_eval_artifacts(&dir, &artifact.evaluation)?;

    let cmp = &artifact.evaluation.comparison;
    println!("reference: {reference_label}");
    println!("max exit-rate gap: {:.4}", cmp.max_ice_gap);
    if let Some(w1) = cmp.w1_evacuation {
        println!("evacuation-time W1: {w1:.4} s");
    }
    if let Some(ade) = cmp.paired_ade {
        println!("paired trajectory ADE: {ade:.4} m");
    }
    if let Some(pred) = &artifact.evaluation.prediction {
        println!(
            "{}s-forecast ADE: {:.4} m (drift baseline {:.4} m)",
            pred.horizon, pred.model_ade, pred.baseline_ade
        );
    }
    println!("report written to {}", dir.join("report.json").display());
    Ok(0)
}

fn cmd_run_preset(args: RunPresetArgs) -> Result<u8> {
    let opts = PresetOptions {
        full_scale: args.full,
        seed_override: args.seed_override,
        reuse_checkpoint: args.checkpoint,
        out_dir: args.out,
    };
    let report = preset::run_preset(&args.name, &opts, |line| println!("{line}"))?;
    if report.passed {
        println!("preset {} passed all {} checks", report.preset, report.checks.len());
        Ok(0)
    } else {
        let failed = report.checks.iter().filter(|c| !c.pass).count();
        println!(
            "preset {} FAILED {failed} of {} checks",
            report.preset,
            report.checks.len()
        );
        Ok(2)
    }
}
