use thiserror::Error;

/// Errors raised by the library. Statistical outcomes such as a boundary
/// estimate or an infeasible approximation are reported in-band instead.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("outside the parameter domain: {0}")]
    Domain(String),
    #[error("invalid index set: {0}")]
    Index(String),
    #[error("rank deficient: {0}")]
    Rank(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("expected {expected} groups, got {got}")]
    GroupCount { expected: String, got: usize },
    #[error("malformed input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, SnError>;

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SnError::Dimension(format!("{what}: expected {expected}, got {got}")))
    }
}
