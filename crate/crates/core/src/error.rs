use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design `{spec}`: {reason}")]
    InvalidDesign { spec: String, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("controller `{controller}` cannot drive design {design}: {reason}")]
    ControllerMismatch {
        controller: &'static str,
        design: String,
        reason: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("degenerate dataset: {0}")]
    DegenerateDataset(&'static str),

    #[error("phase `{phase}` aborted at iteration {iteration}: {reason}")]
    PhaseAbort {
        phase: &'static str,
        iteration: usize,
        reason: String,
    },

    #[error("bad parameter file: {0}")]
    Format(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{0}")]
    Config(String),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("io error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
