//! Error type shared by the numerical core.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Dimensions of an operand do not match what the operation requires.
    ShapeMismatch { context: &'static str, expected: String, got: String },
    /// Cholesky factorization hit a non-positive pivot; `pivot` is its index.
    NotPositiveDefinite { pivot: usize },
    /// Input matrix is not symmetric within tolerance.
    NotSymmetric,
    /// Argument outside the mathematical domain of the operation.
    Domain(String),
    /// A tape variable does not belong to this tape.
    MissingNode { index: usize, len: usize },
    /// A gradient contained NaN or infinity.
    NonFiniteGradient,
    /// A loss evaluated to NaN or infinity; training should abort.
    NonFiniteLoss,
    /// Numerical failure with diagnostic payload (e.g. a matrix dump).
    Numerical(String),
    /// An operation that needs data received none.
    EmptyInput(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { context, expected, got } => {
                write!(f, "shape mismatch in {context}: expected {expected}, got {got}")
            }
            CoreError::NotPositiveDefinite { pivot } => {
                write!(f, "matrix is not positive definite: non-positive pivot at index {pivot}")
            }
            CoreError::NotSymmetric => write!(f, "matrix is not symmetric"),
            CoreError::Domain(msg) => write!(f, "domain error: {msg}"),
            CoreError::MissingNode { index, len } => {
                write!(f, "variable {index} is not recorded on this tape (length {len})")
            }
            CoreError::NonFiniteGradient => write!(f, "non-finite gradient"),
            CoreError::NonFiniteLoss => write!(f, "non-finite loss"),
            CoreError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CoreError::EmptyInput(what) => write!(f, "empty input: {what}"),
        }
    }
}

impl std::error::Error for CoreError {}

pub type Result<T> = std::result::Result<T, CoreError>;
