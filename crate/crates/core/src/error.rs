use thiserror::Error;

/// Errors raised by the estimation, simulation and IO layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("panel too small: T={t}, N={n} (need T >= 2 and N >= 2)")]
    TooSmall { t: usize, n: usize },

    #[error("invalid probability: {0}")]
    InvalidProbability(String),

    #[error("degenerate transition matrix: p11 = p22 = 1 has no unique stationary distribution")]
    Degenerate,

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPd { min_eigenvalue: f64 },

    #[error("factor count {k} exceeds the admissible maximum {max}")]
    KTooLarge { k: usize, max: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("filter normalizer vanished at t={t}")]
    DegeneratePrediction { t: usize },

    #[error("predicted probability of regime {regime} is zero at t={t} while its posterior mass is positive")]
    ZeroPredicted { t: usize, regime: usize },

    #[error("weighted Gram matrix of regime {regime} is singular (condition number {condition:e})")]
    SingularGram { regime: usize, condition: f64 },

    #[error("regime {regime} has no posterior mass")]
    EmptyRegime { regime: usize },

    #[error("eigenvalue matrix is singular")]
    SingularV,

    #[error("true common component is identically zero")]
    ZeroSignal,

    #[error("path enumeration limited to T <= {max}, got T={t}")]
    TooLong { t: usize, max: usize },

    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
