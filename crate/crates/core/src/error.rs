use std::io;

use thiserror::Error;

use crate::net::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside session [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("timestamps not sorted at index {index}")]
    UnsortedTimestamps { index: usize },

    #[error("degenerate window (no fast poses) in round {round_id}")]
    DegenerateWindow { round_id: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("trajectories do not overlap in time")]
    NoOverlap,

    #[error("feature schema mismatch: bundle {bundle:016x}, runtime {runtime:016x}")]
    SchemaMismatch { bundle: u64, runtime: u64 },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("wire protocol: {0}")]
    Wire(#[from] WireError),

    #[error("round {round_id}: {source}")]
    Round {
        round_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }

    pub fn in_round(self, round_id: u64) -> Self {
        Error::Round { round_id, source: Box::new(self) }
    }
}
