use std::path::PathBuf;

use thiserror::Error;

use crate::artifact_io::PROBABILITY_SUM_TOLERANCE;

/// Errors raised by the metric engine.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its layout is wrong (bad sidecar, short binary).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("row {row}: probabilities sum to {sum} (tolerance {PROBABILITY_SUM_TOLERANCE})")]
    RowSum { row: usize, sum: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: validation failed: {message}")]
    RecordValidation { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("word {0:?} has no antonym in the configured map")]
    UnmappedWord(String),
}

impl EvalError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        EvalError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code class: 3 for artifact/input problems, 4 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Domain(_) | EvalError::Degenerate(_) | EvalError::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
