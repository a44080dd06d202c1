//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by mesh construction, assembly, solvers, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or length mismatch between related inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument values (out-of-range parameters, bad configs).
    #[error("validation error: {0}")]
    Validation(String),

    /// Degenerate element geometry (non-positive Jacobian, zero area).
    #[error("mesh quality error: {0}")]
    MeshQuality(String),

    /// A system that must be solvable is singular or indefinite.
    #[error("singular system: {0}")]
    Singular(String),

    /// Least-squares fit is rank deficient; the message names the deficient direction.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    /// The density sub-block has no anchor and cannot be determined.
    #[error("anchor missing: {0}")]
    AnchorMissing(String),

    /// Eigensolver failed to converge within its iteration budget.
    #[error("eigensolver did not converge: {0}")]
    EigenConvergence(String),

    /// A modal damping ratio is at or above critical.
    #[error("unsupported damping: {0}")]
    UnsupportedDamping(String),

    /// Curve fit failed to converge or produced an inadmissible value.
    #[error("fit quality error: {0}")]
    FitQuality(String),

    /// Optimization produced non-finite values.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
