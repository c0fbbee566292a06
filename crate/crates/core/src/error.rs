use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("no equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("terminal voltage {0} pu is below the low-voltage guard")]
    LowVoltage(f64),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("Newton iteration failed at step {step} (t = {time:.4} s): residual {residual:.3e}")]
    StepDiverged {
        step: usize,
        time: f64,
        residual: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoEquilibrium(_)
                | Error::PowerFlowDiverged { .. }
                | Error::StepDiverged { .. }
                | Error::UndefinedMetric(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
