//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: {rule}")]
    Invariant { id: String, rule: String },

    #[error("record {id}: unknown entity type {key:?}")]
    UnknownEntityType { id: String, key: String },

    #[error("record {id}: duplicate id")]
    DuplicateId { id: String },

    #[error("split fractions must be positive and sum to 1 (sum = {sum})")]
    BadFractions { sum: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("record {id}: signal {signal} unavailable")]
    SignalUnavailable { id: String, signal: String },

    #[error("token sequence is empty")]
    EmptyTokenSequence,

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate fit: all labels identical")]
    DegenerateFit,

    #[error("invalid calibration model: {0}")]
    InvalidModel(String),

    #[error("invalid routing policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("no calibration record with a correct small-model output")]
    NoCorrectCalibration,

    #[error("empty candidate grid")]
    EmptyGrid,

    #[error("diagnostic undefined: no escalated records")]
    DiagnosticUndefined,

    #[error("cost ratio must exceed 1 (got {0})")]
    BadCostRatio(f64),

    #[error("subset oracle capped at {max} records, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    FileFormat { path: String, message: String },
}

impl Error {
    /// True for filesystem-level failures, as opposed to content validation.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
