//! Session state machine. Pure: persistence lives in `store`.

use serde::{Deserialize, Serialize};
use uncertainty_core::annotation::{AnnotationRecord, CueSet, Participant};
use uncertainty_core::stimgen::{DotArray, Schedule, Side};

use crate::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResponse {
    pub trial_id: String,
    pub chosen_side: Side,
    pub correct: bool,
    pub latency_ms: f64,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// A response as submitted by the client; correctness is decided here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseInput {
    pub trial_id: String,
    pub chosen_side: Side,
    pub latency_ms: f64,
    #[serde(default)]
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct: bool,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant: Participant,
    pub schedule: Schedule,
    pub responses: Vec<TrialResponse>,
    pub state: SessionState,
}

/// Creation acknowledgement; the schedule is fetched separately without answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant: Participant,
    pub state: SessionState,
    pub trials: usize,
    pub answered: usize,
}

/// One trial as served to the task UI: no answer-determining fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiTrial {
    pub trial_id: String,
    pub left_array: DotArray,
    pub right_array: DotArray,
    pub display_ms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiSchedule {
    pub session_id: String,
    pub trials: Vec<UiTrial>,
}

impl Session {
    pub fn new(session_id: String, participant: Participant, schedule: Schedule) -> Self {
        Self {
            session_id,
            participant,
            schedule,
            responses: Vec::new(),
            state: SessionState::Created,
        }
    }

    pub fn next_trial_id(&self) -> Option<&str> {
        self.schedule
            .trials
            .get(self.responses.len())
            .map(|t| t.trial_id.as_str())
    }

    /// Checks `input` against the schedule and builds the stored response
    /// without mutating the session.
    pub fn judge(&self, input: &ResponseInput, now_ms: u64) -> Result<TrialResponse, SessionError> {
        if self.state == SessionState::Complete {
            return Err(SessionError::Complete(self.session_id.clone()));
        }
        if !(input.latency_ms.is_finite() && input.latency_ms >= 0.0) {
            return Err(SessionError::InvalidResponse(format!(
                "latency_ms must be finite and non-negative, got {}",
                input.latency_ms
            )));
        }
        let trial = self
            .schedule
            .trial(&input.trial_id)
            .ok_or_else(|| SessionError::UnknownTrial(input.trial_id.clone()))?;
        if self.responses.iter().any(|r| r.trial_id == input.trial_id) {
            return Err(SessionError::DuplicateTrial(input.trial_id.clone()));
        }
        let expected = self.next_trial_id().unwrap_or_default();
        if expected != input.trial_id {
            return Err(SessionError::OutOfOrder {
                expected: expected.to_string(),
                got: input.trial_id.clone(),
            });
        }
        Ok(TrialResponse {
            trial_id: input.trial_id.clone(),
            chosen_side: input.chosen_side,
            correct: input.chosen_side == trial.greater_side,
            latency_ms: input.latency_ms,
            timestamp: input.timestamp.unwrap_or(now_ms),
        })
    }

    /// Appends a judged response. Returns true when the session just completed.
    pub fn apply_response(&mut self, response: TrialResponse) -> bool {
        self.responses.push(response);
        if self.responses.len() == self.schedule.trials.len() {
            self.state = SessionState::Complete;
            true
        } else {
            self.state = SessionState::Running;
            false
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            participant: self.participant.clone(),
            state: self.state,
            trials: self.schedule.trials.len(),
            answered: self.responses.len(),
        }
    }

    pub fn ui_schedule(&self) -> UiSchedule {
        UiSchedule {
            session_id: self.session_id.clone(),
            trials: self
                .schedule
                .trials
                .iter()
                .map(|t| UiTrial {
                    trial_id: t.trial_id.clone(),
                    left_array: t.left_array.clone(),
                    right_array: t.right_array.clone(),
                    display_ms: t.display_ms,
                })
                .collect(),
        }
    }

    /// Annotation rows with empty cue and label columns.
    pub fn export_records(&self) -> Vec<AnnotationRecord> {
        self.responses
            .iter()
            .map(|r| AnnotationRecord {
                trial_id: r.trial_id.clone(),
                participant_id: self.participant.participant_id.clone(),
                annotator_id: String::new(),
                label: None,
                correct: r.correct,
                transcript: String::new(),
                cue_set: CueSet::default(),
                latency_ms: Some(r.latency_ms),
            })
            .collect()
    }

    pub fn export_csv(&self) -> Result<String, SessionError> {
        let mut buf = Vec::new();
        uncertainty_core::annotation::write_annotations(&mut buf, &self.export_records())?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }
}
