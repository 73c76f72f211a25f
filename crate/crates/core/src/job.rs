//! Generation job lifecycle.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::Diagnostic;
use crate::taxonomy::{ExamSpec, JobId, QuestionId};
use crate::validator::ValidationReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason")]
pub enum JobState {
    Pending,
    Prompted,
    Received,
    Parsed,
    Validated,
    Failed(String),
}

impl JobState {
    fn rank(&self) -> Option<u8> {
        match self {
            JobState::Pending => Some(0),
            JobState::Prompted => Some(1),
            JobState::Received => Some(2),
            JobState::Parsed => Some(3),
            JobState::Validated => Some(4),
            JobState::Failed(_) => None,
        }
    }

    /// Forward by exactly one stage, or to Failed from any live state.
    pub fn can_advance_to(&self, next: &JobState) -> bool {
        match (self.rank(), next.rank()) {
            (Some(_), None) => !self.is_terminal(),
            (Some(a), Some(b)) => b == a + 1,
            (None, _) => false,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Validated | JobState::Failed(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            JobState::Pending => "Pending",
            JobState::Prompted => "Prompted",
            JobState::Received => "Received",
            JobState::Parsed => "Parsed",
            JobState::Validated => "Validated",
            JobState::Failed(_) => "Failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("job cannot move from {from} to {to}")]
pub struct IllegalJobTransition {
    pub from: &'static str,
    pub to: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(flatten)]
    pub state: JobState,
    pub at: DateTime<Utc>,
}

/// The question a regeneration job replaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replaces {
    pub job_id: JobId,
    pub question_id: QuestionId,
    pub ordinal: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub spec: ExamSpec,
    pub model_config: String,
    #[serde(flatten)]
    pub state: JobState,
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub prompt_digest: Option<String>,
    #[serde(default)]
    pub raw_response: Option<String>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default)]
    pub question_ids: Vec<QuestionId>,
    #[serde(default)]
    pub validation: Option<ValidationReport>,
    #[serde(default)]
    pub replaces: Option<Replaces>,
    pub created_at: DateTime<Utc>,
}

impl JobRecord {
    pub fn new(spec: ExamSpec, model_config: impl Into<String>) -> Self {
        let now = Utc::now();
        JobRecord {
            id: JobId::random(),
            spec,
            model_config: model_config.into(),
            state: JobState::Pending,
            transitions: vec![Transition {
                state: JobState::Pending,
                at: now,
            }],
            prompt: None,
            prompt_digest: None,
            raw_response: None,
            diagnostics: Vec::new(),
            question_ids: Vec::new(),
            validation: None,
            replaces: None,
            created_at: now,
        }
    }

    pub fn advance(&mut self, next: JobState) -> Result<(), IllegalJobTransition> {
        if !self.state.can_advance_to(&next) {
            return Err(IllegalJobTransition {
                from: self.state.name(),
                to: next.name(),
            });
        }
        self.transitions.push(Transition {
            state: next.clone(),
            at: Utc::now(),
        });
        self.state = next;
        Ok(())
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        let _ = self.advance(JobState::Failed(reason.into()));
    }
}
