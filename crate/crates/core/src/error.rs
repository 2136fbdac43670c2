use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value detected in {context}")]
    NonFinite { context: String },

    #[error("{context}: expected scalar, got shape {shape:?}")]
    NotScalar { context: &'static str, shape: Vec<usize> },

    #[error("quaternion norm {norm} outside unit tolerance")]
    NonUnitQuaternion { norm: f64 },

    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: &'static str },

    #[error("non-rigid transform: {detail}")]
    NonRigid { detail: String },

    #[error("trajectory length mismatch: ground truth {gt} vs estimate {est}")]
    TrajectoryLengthMismatch { gt: usize, est: usize },

    #[error("trajectory too short for drift evaluation: path length {path_m:.3} m, all lengths {skipped:?} m skipped")]
    PathTooShort { path_m: f64, skipped: Vec<f64> },

    #[error("unit-scale pose has no metric magnitude: {context}")]
    UnitScalePose { context: &'static str },

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),

    #[error("cannot resample: input {kind} empty but target count is {target}")]
    EmptyResampleInput { kind: &'static str, target: usize },

    #[error("no appearance source available")]
    NoAppearance,

    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step} (batch seed {batch_seed}): loss is not finite")]
    Diverged { step: usize, batch_seed: u64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, detail: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.into(),
            line,
            detail: detail.into(),
        }
    }
}
