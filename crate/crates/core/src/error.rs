use alloc::string::String;

/// Errors raised by environment sampling, estimation, and the optimizer drivers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter lies outside the region where the distribution map is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// An environment or loss description violates its invariants.
    #[error("invalid specification: {0}")]
    Spec(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    /// Every history column has zero parameter movement.
    #[error("degenerate history: parameter differences are all zero")]
    DegenerateHistory,
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix is singular or not positive definite")]
    Singular,
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
