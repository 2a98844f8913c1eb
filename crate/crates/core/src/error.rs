use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments to a numeric routine (empty input, wrong dimension, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A caller broke an API contract (stale trace, wrong agent count, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {message}", location(.file, *.row))]
    Ingestion {
        file: PathBuf,
        row: Option<usize>,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("at step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(file: &std::path::Path, row: Option<usize>) -> String {
    match row {
        Some(row) => format!("{} (row {row})", file.display()),
        None => file.display().to_string(),
    }
}

impl Error {
    pub fn at_step(self, step: u64) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}
