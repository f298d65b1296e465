use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by generators, estimators and the verification harness.
#[derive(Debug, Error)]
pub enum PaccError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("generation failure: {0}")]
    GenerationFailure(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("undefined ATE: {0}")]
    UndefinedAte(String),

    #[error("weak instrument: sum of d*z is zero")]
    WeakInstrument,

    /// Rejection sampling kept fewer records than the final stage needs.
    #[error("pipeline failure: {survivors} records survived rejection sampling, {required} required")]
    PipelineFailure { survivors: usize, required: u64 },

    #[error("grid rejected: {}", .0.join("; "))]
    GridRejected(Vec<String>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data: {0}")]
    Format(String),
}

impl PaccError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PaccError::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag, used for structured diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            PaccError::InvalidArgument(_) => "invalid-argument",
            PaccError::GenerationFailure(_) => "generation-failure",
            PaccError::DegenerateFit(_) => "degenerate-fit",
            PaccError::UndefinedAte(_) => "undefined-ate",
            PaccError::WeakInstrument => "weak-instrument",
            PaccError::PipelineFailure { .. } => "pipeline-failure",
            PaccError::GridRejected(_) => "grid-rejected",
            PaccError::Io { .. } => "io",
            PaccError::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, PaccError>;
