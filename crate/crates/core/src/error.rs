use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pair ({x}, {z}) for universe of {n} items")]
    InvalidPair { x: usize, z: usize, n: usize },

    #[error("invalid ranking: {0}")]
    InvalidRanking(String),

    #[error("invalid choice observation: {0}")]
    InvalidChoice(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("universe of {n} items exceeds the limit of {max} for {what}")]
    TooLarge { what: &'static str, n: usize, max: usize },

    #[error("objective diverged (non-finite NLL) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("parameter document: {0}")]
    Document(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
