//! Crate-wide error type.

use std::fmt;

/// Errors produced by the numeric, network, training, and persistence layers.
#[derive(Debug)]
pub enum Error {
    /// A precondition on an argument was violated (bad dimension, bad range).
    InvalidArgument(String),
    /// An iterative decomposition exceeded its iteration cap.
    NumericalFailure(String),
    /// Power iteration failed to converge within the iteration budget.
    /// Carries the last estimate so callers can decide whether to use it.
    ConvergenceNotReached {
        sigma: f64,
        u: Vec<f64>,
        v: Vec<f64>,
        iterations: usize,
    },
    /// A convolution kernel exceeds the spatial extent it is applied to.
    KernelTooLarge {
        kernel: (usize, usize),
        extent: (usize, usize),
    },
    /// A spectral estimate carries the wrong witness kind for the requested gradient.
    DegenerateWitness,
    /// Layer shapes do not compose.
    ShapeMismatch(String),
    /// Sensitivity is undefined for a zero perturbation.
    ZeroPerturbation,
    /// An attack exhausted its iteration budget without misclassifying.
    MaxItersReached { iterations: usize },
    Io(std::io::Error),
    /// A persisted file is malformed (bad magic, bad dimensions, truncation).
    Format(String),
    /// A persisted file has an unsupported version.
    VersionMismatch { found: u16, expected: u16 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Self::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Self::ConvergenceNotReached {
                sigma, iterations, ..
            } => write!(
                f,
                "power iteration did not converge after {iterations} iterations (last sigma {sigma})"
            ),
            Self::KernelTooLarge { kernel, extent } => write!(
                f,
                "kernel {}x{} exceeds input extent {}x{}",
                kernel.0, kernel.1, extent.0, extent.1
            ),
            Self::DegenerateWitness => write!(f, "spectral estimate lacks a usable witness"),
            Self::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Self::ZeroPerturbation => write!(f, "sensitivity is undefined for a zero perturbation"),
            Self::MaxItersReached { iterations } => {
                write!(f, "attack reached its cap of {iterations} iterations")
            }
            Self::Io(err) => write!(f, "io error: {err}"),
            Self::Format(msg) => write!(f, "format error: {msg}"),
            Self::VersionMismatch { found, expected } => {
                write!(f, "version mismatch: found {found}, expected {expected}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
