use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, allowed {allowed:e})")]
    NotPsd { min_eigenvalue: f64, allowed: f64 },

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("mechanism is not common to the target: {0}")]
    NotCommon(String),

    #[error("query matrix is not answerable from the common mechanism")]
    NotAnswerable,

    #[error("solver did not converge after {iterations} iterations (constraint violation {violation:e})")]
    SolverFailed {
        iterations: usize,
        violation: f64,
        /// Best (feasibility-shifted) covariance found.
        best: Box<nalgebra::DMatrix<f64>>,
    },

    #[error("linear program has no solution: {0}")]
    Infeasible(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
