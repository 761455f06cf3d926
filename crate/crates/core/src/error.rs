use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: malformed header: {msg}")]
    MalformedHeader {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: non-numeric cell {cell:?} in column {column}")]
    NonNumericCell {
        path: PathBuf,
        line: usize,
        column: String,
        cell: String,
    },

    #[error("{path}:{line}: wrong column count: expected {expected}, found {found}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: trajectory {index} shorter than horizon ({len} < {horizon})")]
    TrajectoryTooShort {
        path: PathBuf,
        index: usize,
        len: usize,
        horizon: usize,
    },

    #[error("{path}:{line}: gravity vector not unit length (norm {norm})")]
    NonUnitGravity {
        path: PathBuf,
        line: usize,
        norm: f64,
    },

    #[error("{path}: non-uniform time step in trajectory {index} at row {row}")]
    NonUniformDt {
        path: PathBuf,
        index: usize,
        row: usize,
    },

    #[error("{0}: no trajectories")]
    NoTrajectories(PathBuf),

    #[error("sequences too short for the step pattern: {0}")]
    SequenceTooShort(String),

    #[error("sequence too long for exhaustive enumeration ({0} > {1})")]
    SequenceTooLong(usize, usize),

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
