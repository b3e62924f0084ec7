use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solve did not reach tolerance: residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    #[error("eigenvalue iteration stagnated, last Rayleigh quotient {rayleigh}")]
    Stagnation { rayleigh: f64 },

    #[error("rejected problem: {0}")]
    RejectedProblem(String),

    #[error("malformed mask file: {0}")]
    MaskFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
