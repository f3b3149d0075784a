use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The concentration matrix violates its invariants.
    #[error("invalid concentration matrix: {0}")]
    InvalidConcentrations(String),

    /// The Gram matrix of the concentrations cannot be inverted reliably.
    #[error("singular concentration design (reciprocal condition {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
