//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value; the message names the offending field.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("no trainable coordinates")]
    NoTrainable,

    #[error("capacity exhausted at task {task}: no coordinates left to train")]
    CapacityExhausted { task: usize },

    #[error("step size eta must lie in [0, 1], got {0}")]
    EtaOutOfRange(f64),

    #[error("unknown task {task}: only {completed} task(s) completed")]
    UnknownTask { task: usize, completed: usize },

    #[error("selection count {j} out of range for {n} example(s)")]
    SelectionOutOfRange { j: usize, n: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse error at {path}:{line}: {message}")]
    CsvParse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
