use thiserror::Error;

/// Errors shared across the simulation library.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stage ordering error: {0}")]
    StageOrdering(String),

    #[error("enumeration limit exceeded: {n} documents (max {max})")]
    EnumerationLimit { n: usize, max: usize },

    #[error("verification failure: {0}")]
    Verification(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
