use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range ({len} elements)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("could not place {n_agents} agents with min separation {min_separation} m after {attempts} rejection rounds")]
    PackingInfeasible {
        n_agents: usize,
        min_separation: f64,
        attempts: usize,
    },

    #[error("numerical blowup at t = {time} s: {what}")]
    NumericalBlowup { time: f64, what: String },

    #[error("training diverged: every sample in epoch {epoch} was skipped")]
    TrainingDiverged { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("trajectory file error: {0}")]
    TrajectoryFormat(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code per the CLI contract: 1 config, 2 runtime/numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::Io { .. } => 3,
            Error::Manifest(_) | Error::TrajectoryFormat(_) | Error::Checkpoint(_) | Error::Report(_) => 3,
            _ => 2,
        }
    }
}
