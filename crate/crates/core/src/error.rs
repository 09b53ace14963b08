use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error originated from. Reported in the CLI error JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Model,
    Solver,
    Emission,
    Tomography,
    Calibration,
    Sweep,
    Io,
}

impl Stage {
    pub const fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Model => "model",
            Stage::Solver => "solver",
            Stage::Emission => "emission",
            Stage::Tomography => "tomography",
            Stage::Calibration => "calibration",
            Stage::Sweep => "sweep",
            Stage::Io => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("step size underflow at t = {t} ps")]
    StepSizeUnderflow { t: f64 },

    #[error("tolerance not achieved within {steps} steps (stopped at t = {t} ps)")]
    ToleranceNotAchieved { t: f64, steps: usize },

    #[error("truncated trajectory: ends at {end} ps, horizon is {horizon} ps")]
    TruncatedTrajectory { end: f64, horizon: f64 },

    #[error("projector index {0} out of range 1..=16")]
    ProjectorIndex(usize),

    #[error("projector set is not tomographically complete (singular B matrix)")]
    SingularBasis,

    #[error("degenerate counts (k = 0)")]
    DegenerateCounts,

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("non-decaying data: {0}")]
    NonDecaying(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("empty free-parameter list")]
    NoFreeParameters,

    #[error("invalid bounds for `{name}`: [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("contour level {level} outside counts range ({min}, {max}]")]
    LevelOutOfRange { level: f64, min: f64, max: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn stage(&self) -> Stage {
        use Error::*;
        match self {
            InvalidParameter { .. } => Stage::Model,
            DimensionMismatch { .. } | InvalidState(_) => Stage::Model,
            StepSizeUnderflow { .. } | ToleranceNotAchieved { .. } => Stage::Solver,
            TruncatedTrajectory { .. } | ProjectorIndex(_) => Stage::Emission,
            SingularBasis | DegenerateCounts | NotPositive { .. } => Stage::Tomography,
            NonDecaying(_) | InsufficientPoints { .. } | NoFreeParameters | InvalidBounds { .. } => {
                Stage::Calibration
            }
            InvalidDataset(_) => Stage::Io,
            LevelOutOfRange { .. } | InvalidGrid(_) => Stage::Sweep,
            Config(_) | Json(_) => Stage::Config,
            Schema { .. } | Io { .. } => Stage::Io,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | Json(_) | InvalidParameter { .. } | InvalidBounds { .. } | NoFreeParameters | InvalidGrid(_) => 2,
            Schema { .. } | Io { .. } | InvalidDataset(_) | InsufficientPoints { .. } | LevelOutOfRange { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
