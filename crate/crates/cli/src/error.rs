use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(pgas::Error),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// Exit status: 2 for bad input, 3 for sampler failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<pgas::Error> for CliError {
    fn from(e: pgas::Error) -> Self {
        use pgas::Error as E;
        match e {
            E::Io(msg) => CliError::Io(msg),
            E::InvalidInput(_)
            | E::DimensionMismatch(_)
            | E::TooFewParticles { .. }
            | E::PlanOutOfRange(_)
            | E::IntractableTransition
            | E::IntractableInitial
            | E::NotControllable { .. }
            | E::Parse(_) => CliError::Validation(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
