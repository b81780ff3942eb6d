use thiserror::Error;

/// Errors produced by the fairtree library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("column `{0}` is missing from the data header")]
    MissingColumn(String),

    #[error("data row {row}: missing value in column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("data row {row}: cannot parse `{value}` in numerical column `{column}`")]
    Parse { row: usize, column: String, value: String },

    #[error("data row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown category `{token}` for feature `{feature}`")]
    UnknownCategory { feature: String, token: String },

    #[error("insufficient distinct structure for k clusters: fully grown tree has {leaves} leaves, k = {k}")]
    InsufficientStructure { leaves: usize, k: usize },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("invalid model document: {0}")]
    Model(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
