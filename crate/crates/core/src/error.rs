use thiserror::Error;

use crate::model::AttributeValue;

/// Errors surfaced by the owner-side pipeline.
#[derive(Debug, Error)]
pub enum QbError {
    #[error("row `{row_id}` is missing searchable attribute `{attribute}`")]
    MissingAttribute { row_id: String, attribute: String },

    #[error("duplicate row id `{0}`")]
    DuplicateRowId(String),

    #[error("relation has no rows")]
    EmptyRelation,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{sensitive} sensitive values are fewer than the {bins} sensitive bins required (need |S| >= x = {bins})")]
    TooFewSensitiveValues { sensitive: usize, bins: usize },

    #[error("|S| = {sensitive} exceeds |NS| = {nonsensitive}; use the reversed bin construction")]
    UseReversed { sensitive: usize, nonsensitive: usize },

    #[error("|S| = {sensitive} does not exceed |NS| = {nonsensitive}; use the standard bin construction")]
    NotReversed { sensitive: usize, nonsensitive: usize },

    #[error("value `{0}` is not covered by the bin layout")]
    ValueNotInLayout(AttributeValue),

    #[error("integrity failure on encrypted tuple `{0}`")]
    Integrity(String),

    #[error("security oracle refused: {0}")]
    UniverseTooLarge(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("infeasible dataset spec: {0}")]
    Infeasible(String),

    #[error("query {index}: {source}")]
    AtQuery {
        index: usize,
        #[source]
        source: Box<QbError>,
    },

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QbError>;
