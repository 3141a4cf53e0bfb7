use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every layer of the engine.
///
/// Variants are grouped so the CLI can map them onto exit codes: usage
/// problems, data/format problems and numeric failures.
#[derive(Debug, Error)]
pub enum V2cError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint checksum mismatch (file is corrupted or was modified)")]
    Checksum,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl V2cError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        V2cError::Io { path: path.into(), source }
    }

    /// Process exit code: 1 usage, 2 data/format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            V2cError::Usage(_) => 1,
            V2cError::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, V2cError>;
