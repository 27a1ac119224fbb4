use thiserror::Error;

/// Errors raised by the samplers, models and numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("every log-weight is -inf; the particle system has collapsed")]
    AllWeightsDegenerate,

    #[error("log-weight is NaN or +inf")]
    InvalidLogWeight,

    #[error(
        "transition density cannot be evaluated for this model; use a rejuvenation or ABC sweep"
    )]
    IntractableTransition,

    #[error("initial density cannot be evaluated for this model")]
    IntractableInitial,

    #[error("at least {min} particles are required, got {got}")]
    TooFewParticles { min: usize, got: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("rejuvenation window out of range: {0}")]
    PlanOutOfRange(String),

    #[error("(A, F) is not controllable: rank of the controllability matrix is {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("numerical rank failure: {0}")]
    NumericalRankFailure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("empty sweep log")]
    EmptyLog,

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
