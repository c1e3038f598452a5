use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("probability {value} at index {index} is outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("enumeration of {units} binary units exceeds the limit of {limit}")]
    EnumerationTooLarge { units: usize, limit: usize },

    #[error("minibatch is empty")]
    EmptyMinibatch,

    #[error("training diverged at epoch {epoch}: |parameter| = {magnitude:e} exceeds {limit:e}")]
    Diverged {
        epoch: usize,
        magnitude: f64,
        limit: f64,
    },

    #[error("reference weights are required for this regularizer but none are available")]
    MissingReference,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("IDX parse error at byte offset {offset}: bad magic number {found:#010x}")]
    IdxBadMagic { offset: usize, found: u32 },

    #[error("IDX parse error: file truncated, expected {expected} bytes but found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX parse error: dimensions {dims:?} overflow the addressable size")]
    IdxDimensionOverflow { dims: Vec<u32> },

    #[error("CSV parse error at row {row}, column {col}: {message}")]
    CsvCell {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidProbability { .. } => "invalid_probability",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::EnumerationTooLarge { .. } => "enumeration_too_large",
            Error::EmptyMinibatch => "empty_minibatch",
            Error::Diverged { .. } => "diverged",
            Error::MissingReference => "missing_reference",
            Error::Data(_) => "data",
            Error::IdxBadMagic { .. } => "idx_bad_magic",
            Error::IdxTruncated { .. } => "idx_truncated",
            Error::IdxDimensionOverflow { .. } => "idx_dimension_overflow",
            Error::CsvCell { .. } => "csv_cell",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serde",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
