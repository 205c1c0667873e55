use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical instability at t = {time_us} us: {what}")]
    NumericalInstability { time_us: f64, what: String },

    #[error("resource refusal: {0}")]
    ResourceLimit(String),

    #[error("disorder realization {index}: {source}")]
    Realization { index: usize, source: Box<Error> },

    #[error("trajectory {index}: {source}")]
    Trajectory { index: usize, source: Box<Error> },

    #[error("scan point ({d_delta_frac}, {d_omega_frac}): {source}")]
    ScanPoint {
        d_delta_frac: f64,
        d_omega_frac: f64,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    /// The innermost error, with realization/trajectory/scan tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Realization { source, .. }
            | Error::Trajectory { source, .. }
            | Error::ScanPoint { source, .. } => source.root(),
            other => other,
        }
    }
}
