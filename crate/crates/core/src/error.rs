use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("operator is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("columns are linearly dependent (column {column}, relative pivot {pivot:e})")]
    RankDeficient { column: usize, pivot: f64 },
    #[error("rayleigh-ritz orthonormalization requires an operator")]
    MissingOperator,
    #[error("frame too far from reference subspace (column {column}, projected norm {norm:e})")]
    TooFar { column: usize, norm: f64 },
    #[error("direction is not tangent to the frame (deviation {deviation:e})")]
    NotTangent { deviation: f64 },
    #[error("dense realization requested for n = {n}, budget is {limit}")]
    BudgetExceeded { n: usize, limit: usize },
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("insufficient data: need {needed} qualifying rows, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("no sufficient decrease after {backtracks} backtracking steps")]
    NoDecrease { backtracks: usize },
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
}

pub type Result<T> = std::result::Result<T, Error>;
