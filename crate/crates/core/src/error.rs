use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("logistic fit did not converge after {iterations} iterations ({context}); try ridge > 0")]
    NonConvergence { iterations: usize, context: String },
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),
    #[error("positivity violation: {0} is zero")]
    Positivity(String),
    #[error("targeting error: {0}")]
    Targeting(String),
    #[error("empty stratum: {0}")]
    EmptyStratum(String),
    #[error("degenerate weights: variance of observed weights is zero")]
    DegenerateWeights,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("bootstrap error: {0}")]
    Bootstrap(String),
}

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Estimation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Domain(_) => ErrorClass::Config,
            Error::Data(_) | Error::Calibration(_) => ErrorClass::Data,
            _ => ErrorClass::Estimation,
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Calibration(_) => "dgp",
            Error::Data(_) => "data",
            Error::NonConvergence { .. } | Error::SingularDesign(_) | Error::DegenerateDensity(_) => {
                "nuisance"
            }
            Error::Positivity(_) | Error::Targeting(_) | Error::EmptyStratum(_) => "tmle",
            Error::DegenerateWeights | Error::Domain(_) | Error::Bootstrap(_) => "sensitivity",
        }
    }
}
