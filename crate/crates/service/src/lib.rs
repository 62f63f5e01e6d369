//! Session service: serves trial schedules to the task UI and persists
//! responses in append-only per-session logs.

pub mod http;
pub mod session;
pub mod store;

pub use http::{router, serve};
pub use session::{
    Feedback, ResponseInput, Session, SessionState, SessionSummary, TrialResponse, UiSchedule,
    UiTrial,
};
pub use store::{replay, CreateSession, Event, SessionStore};

use uncertainty_core::annotation::AnnotationError;
use uncertainty_core::stimgen::StimError;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown trial {0:?}")]
    UnknownTrial(String),
    #[error("out-of-order response: expected {expected:?}, got {got:?}")]
    OutOfOrder { expected: String, got: String },
    #[error("trial {0:?} already answered")]
    DuplicateTrial(String),
    #[error("session {0:?} is complete")]
    Complete(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt session log: {0}")]
    Log(String),
    #[error(transparent)]
    Stimulus(#[from] StimError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}
