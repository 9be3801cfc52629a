//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdbmError {
    /// An argument fell outside its mathematical domain (e.g. t outside [0, T]).
    #[error("domain error: {0}")]
    Domain(String),

    /// Elementwise operation on tensors of different shapes.
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    /// Grid index outside 0..=N.
    #[error("grid index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    /// Schedule integrates to zero; bridge coefficients are undefined.
    #[error("degenerate schedule: cumulative rate over [0, T] is zero")]
    DegenerateSchedule,

    /// Evaluation at a point where the formula diverges (e.g. coth at t = T).
    #[error("singularity: {0}")]
    Singularity(String),

    /// Division by a zero noise profile entry.
    #[error("zero noise profile: {0}")]
    ZeroPi(String),

    /// Coefficient tables are mutually inconsistent (negative kernel variance).
    #[error("inconsistent coefficients: {0}")]
    Inconsistent(String),

    /// Invalid configuration value.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    /// Malformed file contents (bad magic, truncated payload, bad header).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RdbmError>;

impl RdbmError {
    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        RdbmError::ShapeMismatch {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
