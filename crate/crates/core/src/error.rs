use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class. Maps one-to-one onto CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("checksum mismatch: manifest says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("unknown sample id {0}")]
    UnknownId(u64),
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("class count mismatch: expected {expected}, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },
    #[error("table is empty")]
    EmptyTable,
    #[error("class {0} has no support samples")]
    AbsentClass(usize),
    #[error("table has no logits")]
    MissingLogits,
    #[error("score table is empty")]
    EmptyScores,
    #[error("no migration distances to split")]
    EmptyDistances,
    #[error("insufficient pool: requested {requested}, only {available} available")]
    InsufficientPool { requested: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("linear probe diverged at epoch {epoch} (step {step_size}, l2 {l2}, epochs {epochs}, seed {seed})")]
    DivergenceDetected {
        epoch: usize,
        step_size: f64,
        l2: f64,
        epochs: usize,
        seed: u64,
    },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context: path.into().display().to_string(),
            source,
        }
    }

    /// Stable machine-readable identifier, emitted in CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "MALFORMED_HEADER",
            Error::ChecksumMismatch { .. } => "CHECKSUM_MISMATCH",
            Error::InvariantViolation(_) => "INVARIANT_VIOLATION",
            Error::UnknownId(_) => "UNKNOWN_ID",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::DimMismatch { .. } => "DIM_MISMATCH",
            Error::ClassCountMismatch { .. } => "CLASS_COUNT_MISMATCH",
            Error::EmptyTable => "EMPTY_TABLE",
            Error::AbsentClass(_) => "ABSENT_CLASS",
            Error::MissingLogits => "MISSING_LOGITS",
            Error::EmptyScores => "EMPTY_SCORES",
            Error::EmptyDistances => "EMPTY_DISTANCES",
            Error::InsufficientPool { .. } => "INSUFFICIENT_POOL",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::DivergenceDetected { .. } => "DIVERGENCE_DETECTED",
            Error::Io { .. } => "IO_ERROR",
            Error::Json(e) if e.is_io() => "IO_ERROR",
            Error::Json(_) => "INVALID_JSON",
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => "IO_ERROR",
            Error::Csv(_) => "INVALID_CSV",
            Error::Runtime(_) => "RUNTIME",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.code() {
            "IO_ERROR" => ErrorKind::Io,
            "DIVERGENCE_DETECTED" | "RUNTIME" => ErrorKind::Runtime,
            _ => ErrorKind::Validation,
        }
    }
}
