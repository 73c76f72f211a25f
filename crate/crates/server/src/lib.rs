//! REST facade over the pipeline: jobs, curation, regeneration, export and
//! survey statistics. No authentication; bind to loopback.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use examgen_core::bank::{export, Bank, BankError, ExamFilter, ExportFormat};
use examgen_core::gateway::{builtin_models, Gateway, ModelConfig};
use examgen_core::job::{JobRecord, JobState, Replaces, Transition};
use examgen_core::parser::Severity;
use examgen_core::pipeline::{create_job, create_regeneration_job, revalidate_job, run_job, PipelineError};
use examgen_core::survey::{compute_stats, format_table, parse_csv, SdDivisor};
use examgen_core::taxonomy::{
    validate_spec, AnswerKey, CodeBlock, CurationStatus, Difficulty, ExamSpec, JobId, OptionItem, Question,
    QuestionId, QuestionKind,
};
use examgen_core::validator::{validate_question, Finding, FindingCode, ValidationReport};

#[derive(Clone)]
pub struct AppState {
    pub bank: Arc<Bank>,
    pub gateway: Arc<Gateway>,
    pub models: Arc<BTreeMap<String, ModelConfig>>,
}

impl AppState {
    pub fn new(bank: Arc<Bank>, gateway: Arc<Gateway>) -> Self {
        AppState {
            bank,
            gateway,
            models: Arc::new(builtin_models()),
        }
    }

    pub fn with_models(mut self, models: BTreeMap<String, ModelConfig>) -> Self {
        self.models = Arc::new(models);
        self
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/jobs", post(post_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/questions", get(list_questions))
        .route("/questions/{id}", get(get_question))
        .route("/questions/{id}/curate", post(curate))
        .route("/questions/{id}/regenerate", post(regenerate))
        .route("/export", get(export_endpoint))
        .route("/stats", get(stats).post(stats))
        .with_state(state)
}

/// Serves until the listener fails or the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if !self.details.is_null() {
            body["details"] = self.details;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<BankError> for ApiError {
    fn from(e: BankError) -> Self {
        let status = match &e {
            BankError::UnknownId(_) | BankError::UnknownJob(_) => StatusCode::NOT_FOUND,
            BankError::IllegalTransition { .. } | BankError::DuplicateId { .. } | BankError::DuplicateInBatch(_) => {
                StatusCode::CONFLICT
            }
            BankError::Io(_) | BankError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Bank(b) => b.into(),
            PipelineError::InvalidSpec(errs) => spec_error(&errs),
            PipelineError::NotRejected(_) => ApiError::new(StatusCode::CONFLICT, e.code(), e.to_string()),
            PipelineError::UnknownJob(_) => ApiError::new(StatusCode::NOT_FOUND, e.code(), e.to_string()),
            PipelineError::Prompt(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.code(), other.to_string()),
        }
    }
}

fn spec_error(errs: &[examgen_core::taxonomy::SpecError]) -> ApiError {
    let codes: Vec<&str> = errs.iter().map(|e| e.code()).collect();
    let messages: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
    ApiError::new(StatusCode::BAD_REQUEST, "InvalidSpec", messages.join("; "))
        .details(json!({ "codes": codes, "errors": errs }))
}

fn bad_request(code: &str, message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, code, message)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request("MalformedBody", e.to_string()))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct CreateJob {
    spec: Value,
    model_config: String,
}

#[derive(Serialize)]
struct DiagnosticsSummary {
    errors: usize,
    warnings: usize,
    codes: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct JobView {
    id: JobId,
    state: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    spec: ExamSpec,
    model_config: String,
    transitions: Vec<Transition>,
    prompt_digest: Option<String>,
    diagnostics: DiagnosticsSummary,
    question_ids: Vec<QuestionId>,
    validation: Option<ValidationReport>,
    replaces: Option<Replaces>,
}

impl JobView {
    fn new(job: JobRecord, validation: Option<ValidationReport>) -> Self {
        let mut codes = BTreeMap::new();
        for d in &job.diagnostics {
            *codes.entry(d.code.clone()).or_insert(0) += 1;
        }
        let count = |s: Severity| job.diagnostics.iter().filter(|d| d.severity == s).count();
        JobView {
            state: job.state.name(),
            reason: match &job.state {
                JobState::Failed(r) => Some(r.clone()),
                _ => None,
            },
            diagnostics: DiagnosticsSummary {
                errors: count(Severity::Error),
                warnings: count(Severity::Warning),
                codes,
            },
            id: job.id,
            spec: job.spec,
            model_config: job.model_config,
            transitions: job.transitions,
            prompt_digest: job.prompt_digest,
            question_ids: job.question_ids,
            validation,
            replaces: job.replaces,
        }
    }
}

fn spawn_pipeline(state: &AppState, job_id: JobId, cfg: ModelConfig) {
    let bank = Arc::clone(&state.bank);
    let gateway = Arc::clone(&state.gateway);
    tokio::task::spawn_blocking(move || {
        if let Err(e) = run_job(&bank, &gateway, &job_id, &cfg) {
            log::warn!("job {job_id} failed: {e}");
        }
    });
}

fn model(state: &AppState, name: &str) -> Result<ModelConfig, ApiError> {
    state
        .models
        .get(name)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownModelConfig", format!("no model config named {name:?}")))
}

async fn post_job(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateJob = parse_json(&body)?;
    let spec: ExamSpec =
        serde_json::from_value(req.spec).map_err(|e| bad_request("MalformedSpec", e.to_string()))?;
    validate_spec(&spec).map_err(|errs| spec_error(&errs))?;
    let cfg = model(&state, &req.model_config)?;
    let job = create_job(&state.bank, spec, &req.model_config)?;
    spawn_pipeline(&state, job.id.clone(), cfg);
    Ok((StatusCode::CREATED, Json(JobView::new(job, None))).into_response())
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobView>> {
    Json(state.bank.jobs().into_iter().map(|j| JobView::new(j, None)).collect())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = state
        .bank
        .get_job(&JobId::from(id.as_str()))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownJob", format!("no job with id {id}")))?;
    // Whole-exam findings reflect edits made since generation.
    let validation = match job.state {
        JobState::Validated if job.replaces.is_none() => Some(revalidate_job(&state.bank, &job)),
        _ => job.validation.clone(),
    };
    Ok(Json(JobView::new(job, validation)))
}

#[derive(Serialize)]
struct QuestionView {
    #[serde(flatten)]
    question: Question,
    job_id: JobId,
    findings: Vec<Finding>,
    updated_at: String,
}

impl From<examgen_core::bank::BankRecord> for QuestionView {
    fn from(r: examgen_core::bank::BankRecord) -> Self {
        QuestionView {
            question: r.question,
            job_id: r.job_id,
            findings: r.validation.unwrap_or_default(),
            updated_at: r.updated_at.to_rfc3339(),
        }
    }
}

#[derive(Deserialize)]
struct QuestionQuery {
    job: Option<String>,
}

async fn list_questions(State(state): State<AppState>, Query(q): Query<QuestionQuery>) -> Json<Vec<QuestionView>> {
    let job = q.job.map(|j| JobId::from(j.as_str()));
    Json(state.bank.list(job.as_ref()).into_iter().map(QuestionView::from).collect())
}

async fn get_question(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<QuestionView>, ApiError> {
    let rec = state
        .bank
        .get(&QuestionId::from(id.as_str()))
        .ok_or(BankError::UnknownId(id))?;
    Ok(Json(rec.into()))
}

/// Fields an edit may replace; absent fields are kept.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionPatch {
    pub stem: Option<String>,
    pub code_blocks: Option<Vec<CodeBlock>>,
    pub options: Option<Vec<OptionItem>>,
    pub answer: Option<AnswerKey>,
    pub explanation: Option<String>,
    pub difficulty: Option<Difficulty>,
}

impl QuestionPatch {
    fn apply(self, q: &mut Question) {
        if let Some(v) = self.stem {
            q.stem = v;
        }
        if let Some(v) = self.code_blocks {
            q.code_blocks = v;
        }
        if let Some(v) = self.options {
            q.options = v;
        }
        if let Some(v) = self.answer {
            q.answer = v;
        }
        if let Some(v) = self.explanation {
            q.explanation = v;
        }
        if let Some(v) = self.difficulty {
            q.difficulty = Some(v);
        }
    }
}

#[derive(Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
enum CurateAction {
    Accept,
    Reject,
    Edit { patch: QuestionPatch },
}

fn job_kind(state: &AppState, job_id: &JobId, fallback: QuestionKind) -> QuestionKind {
    state.bank.get_job(job_id).map_or(fallback, |j| j.spec.kind)
}

async fn curate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<QuestionView>, ApiError> {
    let action: CurateAction = parse_json(&body)?;
    let qid = QuestionId::from(id.as_str());
    let bank = &state.bank;
    let rec = match action {
        CurateAction::Accept => bank.set_status(&qid, CurationStatus::Accepted)?,
        CurateAction::Reject => bank.set_status(&qid, CurationStatus::Rejected)?,
        CurateAction::Edit { patch } => {
            let current = bank.get(&qid).ok_or_else(|| BankError::UnknownId(id.clone()))?;
            let kind = job_kind(&state, &current.job_id, current.question.kind);
            let before: Vec<FindingCode> = validate_question(&current.question, kind)
                .into_iter()
                .filter(Finding::is_error)
                .map(|f| f.code)
                .collect();
            let mut edited = current.question.clone();
            patch.apply(&mut edited);
            let findings = validate_question(&edited, kind);
            let introduced: Vec<&Finding> = findings
                .iter()
                .filter(|f| f.is_error() && !before.contains(&f.code))
                .collect();
            if !introduced.is_empty() {
                let codes: Vec<&str> = introduced.iter().map(|f| f.code.as_str()).collect();
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "PatchBreaksInvariants",
                    introduced.iter().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; "),
                )
                .details(json!({ "codes": codes, "findings": introduced })));
            }
            bank.replace_question(&qid, edited, Some(findings))?
        }
    };
    Ok(Json(rec.into()))
}

#[derive(Deserialize, Default)]
struct RegenerateRequest {
    model_config: Option<String>,
}

async fn regenerate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: RegenerateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RegenerateRequest::default()
    } else {
        parse_json(&body)?
    };
    let qid = QuestionId::from(id.as_str());
    let rec = state.bank.get(&qid).ok_or_else(|| BankError::UnknownId(id.clone()))?;
    let name = match req.model_config {
        Some(n) => n,
        None => state
            .bank
            .get_job(&rec.job_id)
            .map(|j| j.model_config)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownJob", "parent job missing"))?,
    };
    let cfg = model(&state, &name)?;
    let job = create_regeneration_job(&state.bank, &qid, &name)?;
    spawn_pipeline(&state, job.id.clone(), cfg);
    Ok((StatusCode::CREATED, Json(JobView::new(job, None))).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
    /// Comma-separated kind slugs.
    kinds: Option<String>,
    min_difficulty: Option<u8>,
    max_difficulty: Option<u8>,
    target_language: Option<String>,
    limit: Option<usize>,
    title: Option<String>,
    #[serde(default)]
    answer_key_separate: bool,
}

fn difficulty_param(name: &str, v: Option<u8>) -> Result<Option<Difficulty>, ApiError> {
    v.map(|l| Difficulty::new(l).ok_or_else(|| bad_request("InvalidFilter", format!("{name} must be 1..=5"))))
        .transpose()
}

async fn export_endpoint(State(state): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let format: ExportFormat = q
        .format
        .as_deref()
        .unwrap_or("json")
        .parse()
        .map_err(|e: String| bad_request("UnknownFormat", e))?;
    let kinds = q
        .kinds
        .as_deref()
        .unwrap_or("")
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            QuestionKind::from_slug(s.trim()).ok_or_else(|| bad_request("InvalidFilter", format!("unknown kind {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let filter = ExamFilter {
        kinds,
        min_difficulty: difficulty_param("min_difficulty", q.min_difficulty)?,
        max_difficulty: difficulty_param("max_difficulty", q.max_difficulty)?,
        target_language: q.target_language,
        limit: q.limit,
        title: q.title,
        answer_key_separate: q.answer_key_separate,
    };
    let doc = state.bank.assemble(&filter);
    let (content_type, file) = match format {
        ExportFormat::Json => ("application/json", "exam.json"),
        ExportFormat::Markdown => ("text/markdown; charset=utf-8", "exam.md"),
    };
    Ok((
        [
            (header::CONTENT_TYPE, content_type.to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{file}\"")),
        ],
        export(&doc, format),
    )
        .into_response())
}

#[derive(Deserialize)]
struct StatsQuery {
    divisor: Option<String>,
}

/// Survey statistics over a CSV request body.
async fn stats(Query(q): Query<StatsQuery>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let divisor = match q.divisor.as_deref() {
        None | Some("sample") => SdDivisor::Sample,
        Some("population") => SdDivisor::Population,
        Some(other) => return Err(bad_request("InvalidDivisor", format!("unknown divisor {other:?}"))),
    };
    let rows = parse_csv(body.as_ref()).map_err(|e| bad_request(e.code(), e.to_string()))?;
    let table = compute_stats(&rows, divisor).map_err(|e| bad_request(e.code(), e.to_string()))?;
    let formatted = format_table(&table);
    Ok(Json(json!({
        "divisor": divisor,
        "responses": rows.len(),
        "table": formatted.text,
        "csv": formatted.csv,
        "cells": table.records(),
    })))
}
