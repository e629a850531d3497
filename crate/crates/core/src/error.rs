use thiserror::Error;

use crate::process::ProcessId;

/// Errors raised by the model engines, analyses and file loaders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("schedule transformation failed at round {round}: {reason}")]
    Transformation { round: usize, reason: String },

    #[error("protocol violation by {process} in round/step {at}: {reason}")]
    ProtocolViolation {
        process: ProcessId,
        at: usize,
        reason: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("input vector outside the task's input set: {0}")]
    Domain(String),

    #[error("capacity exceeded: {what} needs {count} (cap {cap})")]
    Capacity { what: String, count: u128, cap: u128 },

    #[error("candidate name {candidate} did not decide within {budget} rounds")]
    Undecided { candidate: u64, budget: usize },

    #[error("run reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("safety violation: {0}")]
    Safety(String),

    #[error("schedule was modified after it was frozen")]
    ScheduleMutated,

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
