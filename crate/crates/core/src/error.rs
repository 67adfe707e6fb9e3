//! Error type shared by every module of the core crate.

use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vector norm at or below the normalization floor.
    ZeroNorm,
    DimensionMismatch { expected: usize, found: usize },
    /// A function handed to the finite-difference oracle returned NaN or Inf.
    NonFiniteFunction,
    InvalidDimension(&'static str),
    /// Encoder cache does not belong to the parameters passed to backward.
    StaleCache,
    /// Queue key not unit-norm, or tag vector not binary.
    InvalidKey { index: usize, reason: &'static str },
    EmptyBatch,
    NonFiniteGradient,
    /// Configuration field failed validation; carries the field name.
    InvalidConfig { field: &'static str, reason: &'static str },
    EmptyTestSet,
    /// A class in `[0, C)` has no training examples.
    DegenerateLabels { class: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroNorm => f.write_str("cannot normalize a vector with zero norm"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFiniteFunction => f.write_str("function evaluated to a non-finite value"),
            Error::InvalidDimension(what) => write!(f, "invalid dimension: {what}"),
            Error::StaleCache => f.write_str("forward cache does not match encoder shapes"),
            Error::InvalidKey { index, reason } => write!(f, "invalid queue entry {index}: {reason}"),
            Error::EmptyBatch => f.write_str("batch is empty"),
            Error::NonFiniteGradient => f.write_str("gradient contains NaN or Inf"),
            Error::InvalidConfig { field, reason } => write!(f, "invalid config field `{field}`: {reason}"),
            Error::EmptyTestSet => f.write_str("evaluation set is empty"),
            Error::DegenerateLabels { class } => {
                write!(f, "class {class} has no training examples")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
