use thiserror::Error;

/// Errors raised by the scenario, risk, projection and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A setting or measure selection that cannot be resolved.
    #[error("configuration error: {0}")]
    Config(String),

    /// Two operands do not live on the same scenario space or have different dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Construction-time invariant violated (weights, partitions, non-finite values).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation is not available for this combination of components.
    #[error("unsupported: {0}")]
    Capability(String),

    /// An iterative method hit its iteration cap before reaching tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
