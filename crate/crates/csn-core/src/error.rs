//! Error type shared by all core modules.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Everything that can go wrong in the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes incompatible for an operation; carries both shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A configuration violates its invariants.
    InvalidConfig(String),
    /// An id (attribute, part, pattern, image) is not registered.
    UnknownId { what: &'static str, id: usize },
    /// Zero-shot composition is impossible; the message names the missing coverage.
    Composition(String),
    /// Scene sampling could not satisfy the placement constraints.
    Generation(String),
    /// An operation was called outside its contract (e.g. non-scalar loss).
    Contract(String),
    /// A metric has no defined value for the given inputs (reported as absent, never 0).
    UndefinedMetric(&'static str),
    /// A non-finite value appeared where the computation requires finite ones.
    NonFinite(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::UnknownId { what, id } => write!(f, "unknown {what} id {id}"),
            Error::Composition(msg) => write!(f, "composition error: {msg}"),
            Error::Generation(msg) => write!(f, "generation error: {msg}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::UndefinedMetric(what) => write!(f, "metric undefined: {what}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
