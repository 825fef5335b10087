use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown observation preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{preset}` is not available for environment `{env}`: {reason}")]
    PresetUnavailable {
        preset: String,
        env: String,
        reason: String,
    },
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("state does not provide channel `{0}`")]
    MissingChannel(String),
    #[error("channel `{0}` appears more than once")]
    DuplicateChannel(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at step {step}: {what}")]
    NonFiniteLoss { step: usize, what: String },
    #[error("candidate groups exhausted")]
    GroupsExhausted,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("refusing to overwrite existing run at {0} (use --force)")]
    RunExists(PathBuf),
    #[error("every seed failed; first error: {0}")]
    AllSeedsFailed(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
