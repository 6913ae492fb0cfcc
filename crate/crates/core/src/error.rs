//! Error type shared by all modules.

use thiserror::Error;

/// Failure modes surfaced by solvers, samplers, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Two objects that must share a grid (or particle metadata) do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A validation could not distinguish pass from fail on the given grid.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    /// A hard accuracy contract was violated.
    #[error("accuracy loss: {0}")]
    Accuracy(String),

    /// An iterative solver ran out of iterations.
    #[error("no convergence after {iterations} iterations, residual {residual:.3e}")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A quantity that must stay strictly positive underflowed to zero.
    #[error("numerical underflow: {0}")]
    Underflow(String),

    /// A point or sample lies outside the domain it is required to be in.
    #[error("domain violation: {0}")]
    Domain(String),

    /// Inputs produced under different run configurations were mixed.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    /// NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
