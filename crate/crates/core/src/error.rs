use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the adaptation engine.
#[derive(Debug, Error)]
pub enum CtaError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed probability simplex: {0}")]
    Simplex(String),

    #[error("run diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CtaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CtaError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CtaError>;
