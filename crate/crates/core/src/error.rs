use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numerical and statistical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} did not converge: {detail}")]
    NonConvergence { what: &'static str, detail: String },

    #[error("singular system at row {row}: diagonal weight {weight:e} below {threshold:e}")]
    SingularSystem {
        row: usize,
        weight: f64,
        threshold: f64,
    },

    #[error("residual check failed at t = {t}: |residual| = {residual:e} exceeds {limit:e}")]
    ResidualCheck { t: f64, residual: f64, limit: f64 },

    #[error("no upper bracket below {limit:e} with negative score derivative")]
    BracketFailure { limit: f64 },

    #[error("importance weights degenerate: effective sample size {ess:.1} < {min}")]
    DegenerateWeights { ess: f64, min: f64 },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the experiment harness to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_)
            | Error::Precondition(_)
            | Error::Config(_)
            | Error::Parse(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorClass::Validation,
            Error::NonConvergence { .. }
            | Error::SingularSystem { .. }
            | Error::ResidualCheck { .. }
            | Error::BracketFailure { .. }
            | Error::DegenerateWeights { .. }
            | Error::Degenerate(_) => ErrorClass::Numerical,
        }
    }

    /// Short machine-readable tag for JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularSystem { .. } => "singular_system",
            Error::ResidualCheck { .. } => "residual_check",
            Error::BracketFailure { .. } => "bracket_failure",
            Error::DegenerateWeights { .. } => "degenerate_weights",
            Error::Degenerate(_) => "degenerate",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
