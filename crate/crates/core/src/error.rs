//! Error type shared across the crate.

use core::fmt;

/// Errors raised by construction and numerical routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Vector or matrix dimensions do not conform.
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    /// A matrix expected to be symmetric is not, beyond tolerance.
    NotSymmetric { rel_asymmetry: f64 },
    /// A matrix expected to be (semi)definite has a negative pivot or
    /// eigenvalue beyond tolerance.
    NotPositiveDefinite { detail: &'static str },
    /// A linear solve hit a (numerically) singular matrix.
    SingularMatrix { context: &'static str },
    /// A misfit family was evaluated with the wrong arguments.
    FamilyMismatch { detail: &'static str },
    /// Grid weights do not form a probability vector.
    InvalidWeights { detail: &'static str },
    /// A Monte-Carlo integrand produced a non-finite value.
    NonFiniteSample { index: usize },
    /// Requested mesh resolution is degenerate.
    DegenerateResolution { detail: &'static str },
    /// An observation point lies outside the mesh.
    OutsideDomain { x: f64, y: f64 },
    /// Signal median is zero so a relative noise scale is undefined.
    ZeroSignal,
    /// Requested basis size exceeds the available snapshot rank.
    InsufficientRank { requested: usize, available: usize },
    /// A quantity that must be nonnegative was negative.
    NegativeInput { context: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                expected,
                got,
                context,
            } => write!(
                f,
                "dimension mismatch in {context}: expected {expected}, got {got}"
            ),
            Error::NotSymmetric { rel_asymmetry } => {
                write!(
                    f,
                    "matrix is not symmetric (relative asymmetry {rel_asymmetry:e})"
                )
            }
            Error::NotPositiveDefinite { detail } => {
                write!(f, "matrix is not positive (semi)definite: {detail}")
            }
            Error::SingularMatrix { context } => write!(f, "singular matrix in {context}"),
            Error::FamilyMismatch { detail } => write!(f, "misfit family mismatch: {detail}"),
            Error::InvalidWeights { detail } => write!(f, "invalid grid weights: {detail}"),
            Error::NonFiniteSample { index } => {
                write!(f, "non-finite Monte-Carlo sample at index {index}")
            }
            Error::DegenerateResolution { detail } => {
                write!(f, "degenerate mesh resolution: {detail}")
            }
            Error::OutsideDomain { x, y } => {
                write!(f, "observation point ({x}, {y}) lies outside the mesh")
            }
            Error::ZeroSignal => write!(
                f,
                "signal median is zero; noise level from a relative SNR scale is undefined"
            ),
            Error::InsufficientRank {
                requested,
                available,
            } => write!(
                f,
                "requested error basis size {requested} exceeds available snapshot rank {available}"
            ),
            Error::NegativeInput { context } => {
                write!(
                    f,
                    "negative value where a nonnegative one is required: {context}"
                )
            }
        }
    }
}

#[cfg(test)]
impl std::error::Error for Error {}
