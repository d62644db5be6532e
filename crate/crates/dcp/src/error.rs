use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed case-file input; carries the 1-based source line.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Cost model the formulation cannot represent (nonzero quadratic
    /// term or piecewise-linear data).
    #[error("unsupported cost model: {0}")]
    UnsupportedCost(String),

    /// Structurally invalid case data.
    #[error("validation error: {0}")]
    Validation(String),

    /// Branch with a zero tap magnitude; the flow coefficients are undefined.
    #[error("singular tap ratio on branch {0}")]
    SingularTap(usize),

    /// Independent variables imply nonzero thermal duals on a branch whose
    /// limit is treated as unbounded.
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    /// Vector lengths do not match the case dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Non-finite value where a finite one is required.
    #[error("non-finite input: {0}")]
    NonFinite(String),

    /// Gap against a zero reference objective is undefined.
    #[error("undefined gap: reference objective is zero")]
    UndefinedGap,

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tape used out of order (e.g. backward before forward).
    #[error("tape state error: {0}")]
    TapeState(String),

    /// Training aborted because the loss became non-finite.
    #[error("training diverged at epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    #[error("missing reference objectives: {0}")]
    MissingRefs(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
