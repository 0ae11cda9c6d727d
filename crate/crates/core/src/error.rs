use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} out of range (expected 1..={max})")]
    DimensionOutOfRange { dim: usize, max: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter vector has length {got}, model expects {expected}")]
    ParameterLength { expected: usize, got: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid neighborhood: {0}")]
    InvalidNeighborhood(String),

    #[error("configuration {index} is not a member of the neighborhood")]
    NotInNeighborhood { index: usize },

    #[error("numeric domain error in {what}: value {value:e}")]
    NumericDomain { what: &'static str, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("probability table is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("{what} is singular: eigenvalue {eigenvalue:e} against spectral scale {scale:e}")]
    Singular {
        what: String,
        eigenvalue: f64,
        scale: f64,
    },

    #[error("parameter point is not stationary for the population criterion (|grad|_inf = {grad_inf:e})")]
    NotStationary { grad_inf: f64 },

    #[error("non-finite criterion or gradient at iteration {iteration} (theta = {theta:?})")]
    FitNonFinite { iteration: usize, theta: Vec<f64> },

    #[error("line search failed at iteration {iteration} after {shrinks} step reductions")]
    LineSearch { iteration: usize, shrinks: usize },

    #[error("fit did not converge: |grad|_inf = {grad_inf:e} after {iterations} iterations")]
    NotConverged { grad_inf: f64, iterations: usize },

    #[error("{failed} of {total} Monte Carlo trials failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singular { .. } => 3,
            Error::NotConverged { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
