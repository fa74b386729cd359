use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("vehicle left the corridor: |e1| = {offset:.3} m exceeds {corridor:.3} m")]
    CorridorExit { offset: f64, corridor: f64 },
    #[error("ambiguous projection onto the reference path near s = {0:.2} m")]
    AmbiguousProjection(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid path: {0}")]
    Path(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
