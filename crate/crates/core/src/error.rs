//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: left has {left} entries, right has {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: String },

    #[error("empty input: {context}")]
    EmptyInput { context: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at {path}:{line}: {detail}")]
    MalformedRow {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("empty cell selection for {path}")]
    EmptySelection { path: String },

    #[error("series for bs {bs_id} too short: {len} intervals, need more than {needed}")]
    InsufficientHistory {
        bs_id: u64,
        len: usize,
        needed: usize,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a round index to an error propagating out of the round loop.
    pub fn in_round(self, round: usize) -> Error {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
