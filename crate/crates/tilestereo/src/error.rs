use thiserror::Error;

/// Crate-wide error type. Shape and configuration problems are programming or
/// config errors; `Io`/`Format` come from files; `Numeric` marks non-finite
/// values where the pipeline refuses to continue.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
