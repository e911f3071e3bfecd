use thiserror::Error;

/// Unified error type for the whole crate.
///
/// The variants mirror the failure classes that matter to callers: schema
/// problems are user-fixable input mistakes, size limits protect against
/// accidental combinatorial blowups, numeric and divergence failures are
/// runtime conditions a search loop may want to survive, and consistency
/// errors indicate an internal cross-check failed and the result cannot be
/// trusted.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed template, expression, or configuration input.
    #[error("schema error: {0}")]
    Schema(String),

    /// A search space that cannot be used (e.g. constraints filter out
    /// every assignment).
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    /// An enumeration or evaluation would exceed its configured cap.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// A documented precondition of an operation was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A non-finite value appeared where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A loss evaluation escaped the unit interval.
    #[error("loss contract violated: {0}")]
    LossContract(String),

    /// Weights became non-finite during training.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// The extraction loop finished without a single usable candidate.
    #[error("extraction failed: {0}")]
    ExtractionFailed(String),

    /// Two independently computed values that must agree did not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Malformed data file (CSV rows, weight sidecar).
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
