use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("realizations did not converge: seeds {0:?}")]
    NonConverged(Vec<u64>),

    #[error(transparent)]
    Core(#[from] spinml_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 0 ok, 2 non-convergence, 3 configuration error, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 3,
            HarnessError::NonConverged(_) => 2,
            HarnessError::Core(spinml_core::Error::NonConvergence { .. }) => 2,
            HarnessError::Core(
                spinml_core::Error::InvalidModel(_) | spinml_core::Error::Topology(_) | spinml_core::Error::Parse { .. },
            ) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
