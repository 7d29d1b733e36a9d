use thiserror::Error;

use crate::problem::Strategy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the integrators, analyzers and file formats.
///
/// [`Error::exit_code`] maps each variant onto the command-line exit code
/// convention: validation 1, numerical failure 2, stability gate 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid waveform: {0}")]
    Waveform(String),

    #[error("t = {t} lies outside the waveform window [{start}, {end}]")]
    OutsideWindow { t: f64, start: f64, end: f64 },

    #[error("singular Jacobian at t = {t}")]
    SingularJacobian { t: f64 },

    #[error(
        "Newton iteration failed at t = {t} after {iterations} iterations (residual {residual:e})"
    )]
    NewtonFailed {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("index-1 condition violated: {0}")]
    IndexOne(String),

    #[error("inconsistent algebraic data at t = {t}: residual {residual:e}")]
    Inconsistent { t: f64, residual: f64 },

    #[error("stability gate refused {strategy}: {failed}")]
    StabilityGate { strategy: Strategy, failed: String },

    #[error("{context}: line {line}: {message}")]
    Parse {
        context: &'static str,
        line: usize,
        message: String,
    },

    #[error("config field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("convergence study failed at H = {step}: {source}")]
    Study { step: f64, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidPlan(_)
            | Error::InvalidProblem(_)
            | Error::Waveform(_)
            | Error::Parse { .. }
            | Error::ConfigField { .. }
            | Error::IndexOne(_)
            | Error::Io(_) => 1,
            Error::StabilityGate { .. } => 3,
            Error::Study { source, .. } => source.exit_code(),
            Error::OutsideWindow { .. }
            | Error::SingularJacobian { .. }
            | Error::NewtonFailed { .. }
            | Error::NonFinite(_)
            | Error::Inconsistent { .. } => 2,
        }
    }

    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigField {
            field: field.into(),
            message: message.into(),
        }
    }
}
