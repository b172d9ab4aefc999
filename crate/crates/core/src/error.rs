use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid needs at least 3 nodes per side, got {0}")]
    GridTooSmall(usize),

    #[error("coefficient must be strictly positive, found {value} at node {index}")]
    NonPositiveCoefficient { index: usize, value: f64 },

    #[error("operator is flagged indefinite; CG requires an SPD operator")]
    Indefinite,

    #[error("CG breakdown at iteration {iteration}: non-positive curvature {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("GMRES stagnated after {iterations} iterations at relative residual {residual:e}")]
    Stagnation { iterations: usize, residual: f64 },

    #[error("solver did not converge: {iterations} iterations, relative residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("non-finite value at tape node {node}")]
    NonFinite { node: usize },

    #[error("non-finite value: {0}")]
    NumericalFailure(String),

    #[error("sample {index} has a zero-norm target")]
    DegenerateSample { index: usize },

    #[error("solving sample {index} failed: {source}")]
    SampleSolve { index: usize, source: Box<Error> },

    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds 10x initial {initial:e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used by front-ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) | Error::ConfigMismatch(_) => ErrorClass::Usage,
            Error::Shape(_)
            | Error::GridTooSmall(_)
            | Error::NonPositiveCoefficient { .. }
            | Error::DegenerateSample { .. }
            | Error::Format(_)
            | Error::Io(_) => ErrorClass::Data,
            Error::Indefinite
            | Error::Breakdown { .. }
            | Error::Stagnation { .. }
            | Error::NotConverged { .. }
            | Error::Singular { .. }
            | Error::NonFinite { .. }
            | Error::NumericalFailure(_)
            | Error::Diverged { .. } => ErrorClass::Numerical,
            Error::SampleSolve { source, .. } => source.class(),
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorClass::Usage => "usage",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        })
    }
}
