use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("no shift parameter certified up to mu = {max:e}")]
    NoCertifiedMu { max: f64 },

    #[error("numerically singular solve: {0}")]
    NumericalSingularity(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("observation map is not injective (sigma_min = {sigma_min:e})")]
    NonObservable { sigma_min: f64 },

    #[error("control problem is ill-posed (sigma_min = {sigma_min:e})")]
    IllPosedControl { sigma_min: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("quadrature did not reach tolerance: {0}")]
    Tolerance(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be finite, got {value}")))
    }
}
