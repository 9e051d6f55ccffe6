use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    /// Pivot block `block` (0-based layer index of the pivoted system) is
    /// numerically singular.
    #[error("pivot block {block} is singular (pivot {pivot:e} below tolerance {threshold:e})")]
    SingularPivotBlock {
        block: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("dense matrix is singular at column {0}")]
    SingularMatrix(usize),

    #[error(
        "conjugate gradient did not converge in {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("size guard exceeded: dimension {size} > limit {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("block ({row}, {col}) lies outside the block-tridiagonal envelope")]
    OutsideEnvelope { row: usize, col: usize },

    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    #[error("invalid specification file: {0}")]
    InvalidSpec(String),
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
