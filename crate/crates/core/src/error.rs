use thiserror::Error;

/// Errors raised across the library.
///
/// Variants map onto the CLI exit codes: input/contract problems are
/// validation failures, the numerical variants are numerical failures and
/// [`Error::NonConvergence`] is reported separately.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("truncation error: tail mass {tail:.3e} exceeds tolerance {tol:.3e}")]
    Truncation { tail: f64, tol: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("degenerate condition: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("empty classes: {0:?}")]
    EmptyClasses(Vec<usize>),

    #[error("infeasible grid: {0}")]
    InfeasibleGrid(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

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
    /// Process exit code for this error: 2 validation, 3 numerical, 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } => 4,
            Error::NumericalInstability(_)
            | Error::Truncation { .. }
            | Error::Degenerate(_)
            | Error::Singularity(_)
            | Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
