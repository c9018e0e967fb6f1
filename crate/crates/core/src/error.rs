use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("projection failed to resolve constraints after {sweeps} sweeps")]
    ProjectionFailure { sweeps: usize },

    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("computation graph contains a cycle at node {0}")]
    GraphCycle(usize),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("window [{start}, {end}] s lies outside the recorded episode of {duration} s")]
    WindowOutOfRange { start: f64, end: f64, duration: f64 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConstraintViolation(_) | Error::ShapeMismatch(_) => 2,
            Error::NumericalBlowup(_)
            | Error::ProjectionFailure { .. }
            | Error::GraphCycle(_)
            | Error::NonFiniteGradient(_)
            | Error::Divergence(_)
            | Error::WindowOutOfRange { .. } => 3,
            Error::Format(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
