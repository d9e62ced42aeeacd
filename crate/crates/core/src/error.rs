use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {actual}")]
    DimensionMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite component in `{field}` at index {index}")]
    NonFiniteComponent { field: &'static str, index: usize },
    #[error("vector must have at least one component")]
    EmptyVector,
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("metadata field `{0}` holds a non-finite float")]
    NonFiniteMetadata(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("collection `{0}` already exists")]
    NameConflict(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("id {0} already present")]
    DuplicateId(u64),
    #[error("graph is empty")]
    EmptyGraph,
    #[error("invalid search parameters: {0}")]
    InvalidParameter(String),

    #[error("too few training vectors: need at least {needed}, got {got}")]
    TooFewTrainingVectors { needed: usize, got: usize },
    #[error("dimension {dim} is not divisible into {m} sub-vectors")]
    DimensionNotDivisible { dim: usize, m: usize },
    #[error("code entry {position} = {code} is out of range for {k} centroids")]
    CodeOutOfRange { position: usize, code: usize, k: usize },
    #[error("code length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("range filter on field `{0}`, which holds no numeric values")]
    FieldTypeMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt record at byte offset {offset}")]
    CorruptRecord { offset: u64 },
    #[error("malformed bytes at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("record {record} has inconsistent dimension {found} (expected {expected})")]
    InconsistentDimension {
        record: usize,
        expected: usize,
        found: i64,
    },
    #[error("{0} trailing bytes after the last complete record")]
    TrailingGarbage(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            offset,
            reason: reason.into(),
        }
    }

    /// Stable machine-readable code, shared with the HTTP layer.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NonFiniteComponent { .. } => "non-finite-component",
            Error::EmptyVector => "empty-vector",
            Error::ZeroVector => "zero-vector",
            Error::NonFiniteMetadata(_) => "non-finite-metadata",
            Error::InvalidConfig(_) => "invalid-config",
            Error::NameConflict(_) => "name-conflict",
            Error::UnknownCollection(_) => "unknown-collection",
            Error::DuplicateId(_) => "duplicate-id",
            Error::EmptyGraph => "empty-graph",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::TooFewTrainingVectors { .. } => "too-few-training-vectors",
            Error::DimensionNotDivisible { .. } => "dimension-not-divisible",
            Error::CodeOutOfRange { .. } => "code-out-of-range",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::InvalidFilter(_) => "invalid-filter",
            Error::FieldTypeMismatch(_) => "field-type-mismatch",
            Error::Io { .. } => "io-error",
            Error::CorruptRecord { .. } => "corrupt-record",
            Error::Malformed { .. } => "malformed-bytes",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::InconsistentDimension { .. } => "inconsistent-dimension",
            Error::TrailingGarbage(_) => "trailing-garbage",
        }
    }
}
