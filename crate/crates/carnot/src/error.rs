use thiserror::Error;

/// Errors reported by validation and the numerical routines.
#[derive(Debug, Error)]
pub enum CarnotError {
    #[error("matrix {index} is not skew-symmetric (defect {defect:.3e})")]
    NotSkew { index: usize, defect: f64 },

    #[error("spanning matrices are linearly dependent (smallest singular value {sigma:.3e})")]
    DependentSpan { sigma: f64 },

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("truncation order {order} too small: resonant wave numbers reach {needed}")]
    TruncationTooSmall { order: usize, needed: usize },

    #[error("internal consistency check failed: {0}")]
    ConsistencyFailure(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("target vertical point is zero")]
    ZeroTarget,

    #[error("scan grid too coarse: refinement changed the result ({0})")]
    GridTooCoarse(String),

    #[error("covector is not a Lagrange multiplier: no eigenvalue within {tol:.1e} of an integer")]
    NotAMultiplier { tol: f64 },

    #[error("rank check failed: {0}")]
    RankMismatch(String),

    #[error("non-generic target: {0}")]
    NonGenericTarget(String),

    #[error("matrices do not commute (defect {defect:.3e})")]
    NotCommuting { defect: f64 },

    #[error("arc sets are not nested")]
    NotNested,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
