use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("non-finite {what} ({value}); update aborted")]
    NonFiniteLoss { what: &'static str, value: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error(
        "phase interval ({lo}, {hi}] holds {available} snapshots, {requested} requested"
    )]
    NotEnoughSnapshots {
        lo: usize,
        hi: usize,
        available: usize,
        requested: usize,
    },

    #[error("malformed serialized model {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
