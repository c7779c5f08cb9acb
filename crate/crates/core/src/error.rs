use thiserror::Error;

/// Errors raised by the spectral solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("potential is not of the form [[q1, q2], [q2, -q1]]: {0}")]
    StructureViolation(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral parameter must be finite, got {0}")]
    NonFiniteLambda(f64),

    #[error("step size underflow while propagating on [{0}, {1}]")]
    StepUnderflow(f64, f64),

    #[error("no sign change found for eigenvalue index {0}")]
    RootNotBracketed(i64),

    #[error("two eigenvalues collide at index {0}")]
    DuplicateRoot(i64),

    #[error("norming constant for index {0} is not positive ({1})")]
    NonPositiveAlpha(i64, f64),

    #[error("spectral data fail validation: {0}")]
    Validation(String),

    #[error("operator I + F is not positive: leading principal block {0} fails")]
    NotPositive(usize),

    #[error("linear system for x-node {0} is singular or ill-conditioned")]
    SingularSystem(usize),

    #[error("fourier coefficient {0} is at risk of aliasing")]
    AliasRisk(i64),

    #[error("symbol 1 + e_n(f) nearly vanishes at n = {0}")]
    NearZeroSymbol(i64),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e))
    }
}
