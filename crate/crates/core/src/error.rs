use alloc::string::String;
use core::fmt;

/// Errors shared across the numerical modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not match (vector/matrix dimensions, fiber
    /// dimension, grid shape).
    DimensionMismatch { context: &'static str, expected: usize, got: usize },
    /// Two objects that must sit over the same base/fiber point do not.
    PointMismatch { context: &'static str, deviation: f64 },
    /// A matrix that must be invertible is singular (or numerically so).
    Singular { context: &'static str, detail: String },
    /// An iterative solve did not reach its tolerance.
    NonConvergence { context: &'static str, residual: f64, iterations: usize },
    /// Input violates a support/placement precondition.
    Support { context: &'static str, detail: String },
    /// A size guard was exceeded (e.g. dense kernel materialization).
    SizeGuard { context: &'static str, limit: usize, requested: usize },
    /// A required precondition on the input data failed.
    Invalid { context: &'static str, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { context, expected, got } => {
                write!(f, "{context}: dimension mismatch (expected {expected}, got {got})")
            }
            Error::PointMismatch { context, deviation } => {
                write!(f, "{context}: base/fiber coordinates disagree (deviation {deviation:e})")
            }
            Error::Singular { context, detail } => write!(f, "{context}: singular matrix: {detail}"),
            Error::NonConvergence { context, residual, iterations } => {
                write!(f, "{context}: no convergence after {iterations} iterations (residual {residual:e})")
            }
            Error::Support { context, detail } => write!(f, "{context}: support violation: {detail}"),
            Error::SizeGuard { context, limit, requested } => {
                write!(f, "{context}: size guard exceeded ({requested} > {limit})")
            }
            Error::Invalid { context, detail } => write!(f, "{context}: invalid input: {detail}"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
