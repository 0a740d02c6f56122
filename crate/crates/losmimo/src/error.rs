//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the simulation, estimation and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("no usable signal on subarray {subarray} (|alpha| = {magnitude:.3e})")]
    NoUsableSignal { subarray: usize, magnitude: f64 },

    #[error("invalid angular grid: {0}")]
    InvalidGrid(String),

    #[error("message collapsed to zero mass: {0}")]
    MessageCollapsed(String),

    #[error("contradictory evidence: {0}")]
    ContradictoryEvidence(String),

    #[error("degenerate bearings: {0}")]
    DegenerateBearings(String),

    #[error("scenario sampling failed after {attempts} rejections: {reason}")]
    ScenarioRejected { attempts: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("factor cache {path}: header field `{field}` does not match the requested configuration (cached {cached}, requested {requested})")]
    CacheMismatch {
        path: PathBuf,
        field: String,
        cached: String,
        requested: String,
    },

    #[error("factor cache {path}: malformed content at line {line}: {reason}")]
    CacheFormat {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
