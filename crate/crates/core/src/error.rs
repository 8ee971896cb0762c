//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}, line {line}: {msg}")]
    ManifestLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("audio {path}: {msg}")]
    Audio { path: PathBuf, msg: String },

    #[error("feature error: {0}")]
    Feature(String),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("target error: {0}")]
    Target(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("enhance error: {0}")]
    Enhance(String),

    #[error("synth error: {0}")]
    Synth(String),

    #[error("stage {stage} precondition not met: {msg}")]
    StagePrecondition { stage: String, msg: String },

    #[error("stage {stage} failed: {msg}")]
    Stage { stage: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 stage precondition, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::StagePrecondition { .. } => 3,
            _ => 4,
        }
    }
}
