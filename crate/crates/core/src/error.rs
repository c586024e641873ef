use thiserror::Error;

use crate::codecs::{DataType, EncodingKind};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("encoding {kind} does not apply to {dtype} slices")]
    UnsupportedDtype { kind: EncodingKind, dtype: DataType },

    #[error("cannot encode an empty slice")]
    EmptySlice,

    #[error("corrupt payload at byte offset {offset}: {reason}")]
    CorruptPayload { offset: usize, reason: String },

    #[error("cold-cache hook unavailable: {0}")]
    CacheHookUnavailable(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("scaling value {value} by {factor} overflows i64")]
    IntegerOverflow { value: i64, factor: f64 },

    #[error("sample profile has no entry for {0}")]
    MissingProfileEntry(EncodingKind),

    #[error(transparent)]
    Model(#[from] crate::models::ModelError),

    #[error("no training examples cover ({dtype}, {kind})")]
    MissingCoverage { dtype: DataType, kind: EncodingKind },

    #[error("bundle has no {what} model for ({dtype}, {kind})")]
    MissingModel { what: &'static str, dtype: DataType, kind: EncodingKind },

    #[error("storage fit is non-physical (slope {slope})")]
    NegativeThroughput { slope: f64 },

    #[error("encoding profile is empty")]
    EmptyProfile,

    #[error("plan has no measured cost")]
    MissingMeasuredCost,

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse { row: usize, column: usize, reason: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid table file: {0}")]
    InvalidTable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn corrupt(offset: usize, reason: impl Into<String>) -> Self {
        Error::CorruptPayload {
            offset,
            reason: reason.into(),
        }
    }
}
