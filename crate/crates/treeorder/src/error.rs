use thiserror::Error;

/// Library-level error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A sample-size layout violates its invariants.
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    /// Mean/variance parameters violate the model assumptions.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An operation was called outside its stated preconditions.
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;
