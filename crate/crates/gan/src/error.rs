use thiserror::Error;

use crate::condition::ConditioningTrace;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("config error: {0}")]
    Config(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite {component} at step {step}")]
    NonFinite { component: &'static str, step: usize },
    #[error("conditioning aborted after {} iterations: {reason}", .trace.iterations())]
    ConditioningFault {
        reason: String,
        trace: Box<ConditioningTrace>,
    },
    #[error("{failed} of {count} conditioning runs failed (tolerance {tolerance})")]
    TooManyFailures { failed: usize, count: usize, tolerance: f64 },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Facies(#[from] facies_core::FaciesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GanError> = std::result::Result<T, E>;
