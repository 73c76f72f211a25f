//! Drives one job through render → complete → parse → validate → store,
//! persisting the job after every stage.

use thiserror::Error;

use crate::bank::{Bank, BankError};
use crate::gateway::{Gateway, GatewayError, ModelConfig, ProviderKind};
use crate::job::{IllegalJobTransition, JobRecord, JobState, Replaces};
use crate::parser::parse_exam;
use crate::prompt::{narrow_for_regeneration, render_prompt, render_regeneration_prompt, PromptError, PromptText};
use crate::taxonomy::{validate_spec, CurationStatus, ExamSpec, JobId, QuestionId, SpecError};
use crate::validator::{validate, Finding, ValidationReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid spec: {}", .0.iter().map(|e| e.code()).collect::<Vec<_>>().join(", "))]
    InvalidSpec(Vec<SpecError>),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Transition(#[from] IllegalJobTransition),
    #[error("no job with id {0}")]
    UnknownJob(String),
    #[error("question {0} must be Rejected before it can be regenerated")]
    NotRejected(String),
    #[error("the regeneration response contained no usable question")]
    EmptyRegeneration,
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::InvalidSpec(_) => "InvalidSpec",
            PipelineError::Prompt(_) => "PromptError",
            PipelineError::Gateway(e) => e.code(),
            PipelineError::Bank(e) => e.code(),
            PipelineError::Transition(_) => "IllegalJobTransition",
            PipelineError::UnknownJob(_) => "UnknownJob",
            PipelineError::NotRejected(_) => "NotRejected",
            PipelineError::EmptyRegeneration => "EmptyRegeneration",
        }
    }
}

/// Validates the spec and persists a Pending job.
pub fn create_job(bank: &Bank, spec: ExamSpec, model_config: &str) -> Result<JobRecord, PipelineError> {
    validate_spec(&spec).map_err(PipelineError::InvalidSpec)?;
    let job = JobRecord::new(spec, model_config);
    bank.put_job(&job)?;
    Ok(job)
}

/// A Pending job that replaces one Rejected question, narrowed to that
/// question's difficulty.
pub fn create_regeneration_job(
    bank: &Bank,
    question_id: &QuestionId,
    model_config: &str,
) -> Result<JobRecord, PipelineError> {
    let rec = bank
        .get(question_id)
        .ok_or_else(|| BankError::UnknownId(question_id.to_string()))?;
    if rec.question.status != CurationStatus::Rejected {
        return Err(PipelineError::NotRejected(question_id.to_string()));
    }
    let parent = bank
        .get_job(&rec.job_id)
        .ok_or_else(|| PipelineError::UnknownJob(rec.job_id.to_string()))?;
    let narrowed = narrow_for_regeneration(&parent.spec, &rec.question)?;
    let mut job = JobRecord::new(narrowed, model_config);
    job.replaces = Some(Replaces {
        job_id: rec.job_id.clone(),
        question_id: question_id.clone(),
        ordinal: rec.question.ordinal,
    });
    bank.put_job(&job)?;
    Ok(job)
}

/// The prompt a job sends: the plain template, or for a regeneration job the
/// narrowed template plus the stems it must not repeat.
pub fn job_prompt(bank: &Bank, job: &JobRecord) -> Result<PromptText, PipelineError> {
    let Some(replaces) = &job.replaces else {
        return Ok(render_prompt(&job.spec)?);
    };
    let rejected = bank
        .get(&replaces.question_id)
        .ok_or_else(|| BankError::UnknownId(replaces.question_id.to_string()))?;
    let stems: Vec<String> = bank
        .list(Some(&replaces.job_id))
        .into_iter()
        .map(|r| r.question.stem)
        .collect();
    Ok(render_regeneration_prompt(&job.spec, &rejected.question, &stems)?)
}

fn advance(bank: &Bank, job: &mut JobRecord, next: JobState) -> Result<(), PipelineError> {
    job.advance(next)?;
    bank.put_job(job)?;
    Ok(())
}

fn provider_name(kind: ProviderKind) -> &'static str {
    match kind {
        ProviderKind::Live => "live",
        ProviderKind::Fixture => "fixture",
    }
}

/// Runs a Pending job to Validated. On any failure the job is persisted as
/// Failed with the error's code and message, and the error is returned.
pub fn run_job(
    bank: &Bank,
    gateway: &Gateway,
    job_id: &JobId,
    cfg: &ModelConfig,
) -> Result<JobRecord, PipelineError> {
    let mut job = bank
        .get_job(job_id)
        .ok_or_else(|| PipelineError::UnknownJob(job_id.to_string()))?;
    match run_stages(bank, gateway, &mut job, cfg) {
        Ok(()) => Ok(job),
        Err(e) => {
            job.fail(format!("{}: {e}", e.code()));
            let _ = bank.put_job(&job);
            Err(e)
        }
    }
}

fn run_stages(
    bank: &Bank,
    gateway: &Gateway,
    job: &mut JobRecord,
    cfg: &ModelConfig,
) -> Result<(), PipelineError> {
    let prompt = job_prompt(bank, job)?;
    job.prompt = Some(prompt.text.clone());
    job.prompt_digest = Some(prompt.digest.clone());
    advance(bank, job, JobState::Prompted)?;

    let raw = gateway.complete(&prompt, cfg)?;
    job.raw_response = Some(raw.text.clone());
    advance(bank, job, JobState::Received)?;

    let parsed = parse_exam(&raw.text, &job.spec);
    job.diagnostics = parsed.diagnostics;
    let mut questions = parsed.questions;
    for q in &mut questions {
        q.provenance.prompt_digest = prompt.digest.clone();
        q.provenance.model_id = raw.model_id.clone();
        q.provenance.provider = provider_name(cfg.provider).into();
        q.provenance.created_at = raw.received_at;
    }
    if let Some(replaces) = &job.replaces {
        questions.truncate(1);
        let q = questions.first_mut().ok_or(PipelineError::EmptyRegeneration)?;
        q.ordinal = replaces.ordinal;
    }
    advance(bank, job, JobState::Parsed)?;

    let report = validate(&questions, &job.spec);
    let items: Vec<_> = questions
        .iter()
        .map(|q| {
            let findings: Vec<Finding> = report.for_question(&q.id).cloned().collect();
            (q.clone(), findings)
        })
        .collect();
    bank.put_validated(&job.id, &items)?;
    job.question_ids = questions.iter().map(|q| q.id.clone()).collect();
    job.validation = Some(report);
    advance(bank, job, JobState::Validated)?;
    Ok(())
}

/// Recomputes a job's whole-exam report from the bank's current contents,
/// so edits made after generation are reflected.
pub fn revalidate_job(bank: &Bank, job: &JobRecord) -> ValidationReport {
    let questions: Vec<_> = bank.list(Some(&job.id)).into_iter().map(|r| r.question).collect();
    validate(&questions, &job.spec)
}
