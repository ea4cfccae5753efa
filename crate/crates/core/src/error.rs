use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The ridge parameter lies at or beyond the edge where the fixed point
    /// stops existing.
    #[error("lambda = {lambda} is outside the admissible domain (must exceed -{c0_effective})")]
    Domain { lambda: f64, c0_effective: f64 },

    /// The requested quantity does not exist in this aspect-ratio regime.
    #[error("regime error: {0}")]
    Regime(String),

    /// A root finder could not bracket or converge.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    /// A function evaluated inside an expectation was not finite.
    #[error("non-finite value {value} at atom {index} (h = {h}, g = {g})")]
    Evaluation {
        index: usize,
        h: f64,
        g: f64,
        value: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown recipe `{0}`")]
    UnknownRecipe(String),

    /// Finite-sample design too close to singular at this lambda.
    #[error("ill-conditioned design: {0}")]
    Conditioning(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag for status columns.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Regime(_) => "regime",
            Error::Solver(_) => "solver",
            Error::InvalidSpectrum(_) => "invalid_spectrum",
            Error::Evaluation { .. } => "evaluation",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse(_) => "parse",
            Error::UnknownRecipe(_) => "unknown_recipe",
            Error::Conditioning(_) => "conditioning",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code used by the command-line front end:
    /// 1 usage, 2 domain, 3 solver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. } | Error::Regime(_) | Error::Conditioning(_) => 2,
            Error::Solver(_) | Error::Evaluation { .. } => 3,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
