use crate::error::{Error, Result};
use crate::forcefield::ForceField;
use crate::orca::OrcaParams;
use crate::scene::{ExitWall, Scene, SpawnMode};
use crate::sfm::SfmParams;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Room side length, m.
    pub side_length: f64,
    /// Door width, m.
    pub exit_width: f64,
    pub exit_wall: ExitWall,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            side_length: 10.0,
            exit_width: 1.0,
            exit_wall: ExitWall::Right,
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<Scene> {
        Scene::square(self.side_length, self.exit_width, self.exit_wall)
    }
}

/// Which reference simulator produces training and comparison data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Sfm,
    Orca,
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Sfm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths shared by the three networks.
    pub hidden: Vec<usize>,
    pub k_neighbors: usize,
    /// Feed relative velocity to the pair network as well.
    pub pair_velocity_input: bool,
    /// Normalization scale for relative offsets (neighbor and wall), m.
    /// Roughly the distance at which interactions matter; much larger
    /// values flatten short-range repulsion into the network's init noise.
    pub interaction_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            k_neighbors: 4,
            pair_velocity_input: false,
            interaction_scale: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, pos_scale: f64, vel_scale: f64) -> Result<ForceField> {
        ForceField::new(
            &self.hidden,
            self.k_neighbors,
            self.pair_velocity_input,
            pos_scale,
            vel_scale,
            self.interaction_scale,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub n_agents: usize,
    pub n_runs: usize,
    /// Simulated horizon per run, s.
    pub t_max: f64,
    pub spawn_mode: SpawnMode,
    /// Rejection-sampling spacing between spawned agents, m.
    pub min_separation: f64,
    /// Spacing of recorded states, s; must be a multiple of the source step.
    pub record_interval: f64,
    /// Window length in recorded intervals.
    pub window_steps: usize,
    /// Offset between consecutive window starts, in recorded intervals.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Sfm,
            n_agents: 5,
            n_runs: 20,
            t_max: 30.0,
            spawn_mode: SpawnMode::Uniform,
            min_separation: 0.7,
            record_interval: 0.01,
            window_steps: 10,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_runs: usize,
    pub n_agents: usize,
    pub t_max: f64,
    pub spawn_mode: SpawnMode,
    pub min_separation: f64,
    /// Recording spacing for evaluation runs, s; must align with both the
    /// learned-model step and the reference step so runs can be paired.
    pub record_interval: f64,
    /// Integrator step for the learned dynamics, s.
    pub solver_step: f64,
    /// Evaluation seeds start at the top-level seed plus this offset, so
    /// they never collide with training-data seeds.
    pub seed_offset: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_runs: 30,
            n_agents: 5,
            t_max: 30.0,
            spawn_mode: SpawnMode::Uniform,
            min_separation: 0.7,
            record_interval: 0.1,
            solver_step: 0.01,
            seed_offset: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed: data runs use seed + run index, epoch shuffles use
    /// seed + epoch, evaluation uses seed + eval.seed_offset + run index.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    pub sfm: SfmParams,
    pub orca: OrcaParams,
    pub model: ModelConfig,
    pub data: DataConfig,
    /// The `seed` field inside this section is ignored; the top-level seed
    /// is used.
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            scene: SceneConfig::default(),
            sfm: SfmParams::default(),
            orca: OrcaParams::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn steps_per_interval(interval: f64, step: f64, what: &str) -> Result<usize> {
    if !(interval > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "{what}: interval and step must be positive"
        )));
    }
    let n = (interval / step + 0.5).floor() as usize;
    if n == 0 || (n as f64 * step - interval).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "{what}: recording interval {interval} is not a multiple of step {step}"
        )));
    }
    Ok(n)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&body).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(body: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(body).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.build().map(|_| ())?;
        self.sfm.validate()?;
        self.orca.validate()?;
        self.train.validate()?;
        if self.model.hidden.is_empty() || self.model.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig(
                "model.hidden must list positive layer widths".into(),
            ));
        }
        if self.data.n_agents == 0 || self.data.n_runs == 0 {
            return Err(Error::InvalidConfig(
                "data.n_agents and data.n_runs must be >= 1".into(),
            ));
        }
        if self.data.window_steps == 0 || self.data.stride == 0 {
            return Err(Error::InvalidConfig(
                "data.window_steps and data.stride must be >= 1".into(),
            ));
        }
        if !(self.data.t_max > 0.0) || !(self.eval.t_max > 0.0) {
            return Err(Error::InvalidConfig("t_max must be positive".into()));
        }
        if !(self.data.min_separation > 0.0) || !(self.eval.min_separation > 0.0) {
            return Err(Error::InvalidConfig(
                "min_separation must be positive".into(),
            ));
        }
        if self.eval.n_runs == 0 || self.eval.n_agents == 0 {
            return Err(Error::InvalidConfig(
                "eval.n_runs and eval.n_agents must be >= 1".into(),
            ));
        }
        self.data_record_every()?;
        // A training window must span a whole number of solver steps.
        let window_span = self.data.window_steps as f64 * self.data.record_interval;
        steps_per_interval(window_span, self.train.solver_step, "train")?;
        self.eval_record_every(self.eval.solver_step)?;
        Ok(())
    }

    /// Steps between recorded states when generating data.
    pub fn data_record_every(&self) -> Result<usize> {
        let step = match self.data.source {
            DataSource::Sfm => self.sfm.step,
            DataSource::Orca => self.orca.step,
        };
        steps_per_interval(self.data.record_interval, step, "data")
    }

    /// Steps between recorded states for a simulator stepping at `step`.
    pub fn eval_record_every(&self, step: f64) -> Result<usize> {
        steps_per_interval(self.eval.record_interval, step, "eval")
    }

    /// Train section with the master seed patched in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn build_field(&self) -> Result<ForceField> {
        let vel_scale = match self.data.source {
            DataSource::Sfm => self.sfm.desired_speed,
            DataSource::Orca => self.orca.preferred_speed,
        };
        self.model.build(self.scene.side_length, vel_scale)
    }

    /// Hex digest of the canonical JSON form; stable across reordered TOML
    /// keys because field order is fixed by the struct.
    pub fn digest(&self) -> String {
        sha256_json(self)
    }

    /// Digest of everything that determines the generated dataset: seed,
    /// scene, source simulator parameters, and the data section.
    pub fn data_digest(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            seed: u64,
            scene: &'a SceneConfig,
            sfm: Option<&'a SfmParams>,
            orca: Option<&'a OrcaParams>,
            data: &'a DataConfig,
        }
        sha256_json(&View {
            seed: self.seed,
            scene: &self.scene,
            sfm: matches!(self.data.source, DataSource::Sfm).then_some(&self.sfm),
            orca: matches!(self.data.source, DataSource::Orca).then_some(&self.orca),
            data: &self.data,
        })
    }

    /// Digest of everything that determines a trained checkpoint: the data
    /// digest plus the model and train sections. Evaluation settings and
    /// output paths do not participate, so configs differing only in those
    /// can share a checkpoint.
    pub fn training_digest(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            data_digest: String,
            model: &'a ModelConfig,
            train: TrainConfig,
        }
        sha256_json(&View {
            data_digest: self.data_digest(),
            model: &self.model,
            train: self.train_config(),
        })
    }
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
