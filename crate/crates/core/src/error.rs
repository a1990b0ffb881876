use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid tree topology: {0}")]
    Topology(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step failed: {0}")]
    StepFailure(String),

    #[error("eigensolver did not converge: {message} (residual {residual:.3e})")]
    NonConvergence { message: String, residual: f64 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
