use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("disconnected topology: no connected sample after {attempts} attempts")]
    DisconnectedTopology { attempts: usize },

    #[error("argument out of safe range: |L*x| = {value} exceeds {limit}")]
    OutOfSafeRange { value: f64, limit: f64 },

    #[error("non-finite state at iteration {iteration}, agent {agent}: {what}")]
    Diverged {
        iteration: usize,
        agent: usize,
        what: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
