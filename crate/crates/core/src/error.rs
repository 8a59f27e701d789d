//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("tagging error: {0}")]
    Tagging(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
