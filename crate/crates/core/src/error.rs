use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error at segment {position} ({segment:?}): {reason}")]
    Parse {
        /// 1-based position of the offending segment.
        position: usize,
        segment: String,
        reason: String,
    },

    #[error("build error: {0}")]
    Build(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: i64, num_classes: usize },

    #[error("numeric abort: {term} is not finite at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {}: {reason}", path.display())]
    Image { path: PathBuf, reason: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint is truncated: {0}")]
    CheckpointTruncated(String),

    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),

    #[error("architecture mismatch: expected {expected:?}, checkpoint holds {found:?}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest {}:{line}: {reason}", path.display())]
    Manifest { path: PathBuf, line: usize, reason: String },

    #[error("data: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 = usage, 2 = data, 3 = numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::LabelOutOfRange { .. } | Error::Parse { .. } | Error::Build(_) => 1,
            Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}
