use thiserror::Error;

/// Failure modes shared by every module.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("insufficient resolution: {0}")]
    Resolution(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("blow-up detected at t = {t}: H1 norm {h1:.3e} exceeds {limit:.3e}")]
    BlowUpDetected { t: f64, h1: f64, limit: f64 },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Shape(_) => "ShapeError",
            Error::Resolution(_) => "ResolutionError",
            Error::Numerical(_) => "NumericalError",
            Error::Unsupported(_) => "Unsupported",
            Error::EmptySample(_) => "EmptySample",
            Error::BlowUpDetected { .. } => "BlowUpDetected",
            Error::AssumptionViolated(_) => "AssumptionViolated",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
