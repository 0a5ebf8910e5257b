use thiserror::Error;

/// Errors raised by the simulation and estimation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("negative variance {0:.3e} beyond roundoff tolerance")]
    NegativeVariance(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositiveSemidefinite(f64),

    #[error("control protocol grid does not match the requested grid")]
    GridMismatch,

    #[error("field is time dependent: {0}")]
    TimeDependentField(String),

    #[error("field and generator do not share a fixed axis on node {0}")]
    NotAxisFixed(usize),

    #[error("non-local control: {0}")]
    NonLocalControl(String),

    #[error("effective QFI {0:.3e} is not positive; variance is unbounded")]
    UnboundedVariance(f64),

    #[error("oracle step size too large: halving changed the estimate by {0:.2}%")]
    OracleStepTooLarge(f64),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),

    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors that signal bad configuration rather than a failed
    /// simulation. The CLI maps these to a distinct exit code.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch { .. }
                | Error::IndexOutOfRange { .. }
                | Error::UnknownScenario(_)
                | Error::Parse(_)
                | Error::GridMismatch
                | Error::TimeDependentField(_)
                | Error::NotAxisFixed(_)
        )
    }
}
