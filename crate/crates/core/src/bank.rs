//! Question bank: a single JSON-lines file of upsert events, replayed on open.
//!
//! Each line is one event, either a job or a question record. The latest event
//! for a key wins. Writes are appended and synced before the in-memory state
//! changes, so a crash leaves at worst a torn final line, which open drops.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::job::JobRecord;
use crate::markdown::{heading, render_answer, render_explanation, render_question, RenderStyle};
use crate::taxonomy::{
    CurationStatus, Difficulty, DifficultyDistribution, JobId, Question, QuestionId, QuestionKind,
};
use crate::validator::Finding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub question: Question,
    pub job_id: JobId,
    /// Findings attached to this question at its last validation.
    #[serde(default)]
    pub validation: Option<Vec<Finding>>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Job(Box<JobRecord>),
    Record(Box<BankRecord>),
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("bank I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("bank file is corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("question id {id} already belongs to job {existing_job}")]
    DuplicateId { id: String, existing_job: String },
    #[error("question id {0} appears twice in one batch")]
    DuplicateInBatch(String),
    #[error("no question with id {0}")]
    UnknownId(String),
    #[error("no job with id {0}")]
    UnknownJob(String),
    #[error("cannot move question from {from} to {to}")]
    IllegalTransition {
        from: CurationStatus,
        to: CurationStatus,
    },
}

impl BankError {
    pub fn code(&self) -> &'static str {
        match self {
            BankError::Io(_) => "Io",
            BankError::Corrupt { .. } => "Corrupt",
            BankError::DuplicateId { .. } => "DuplicateId",
            BankError::DuplicateInBatch(_) => "DuplicateInBatch",
            BankError::UnknownId(_) => "UnknownId",
            BankError::UnknownJob(_) => "UnknownJob",
            BankError::IllegalTransition { .. } => "IllegalTransition",
        }
    }
}

#[derive(Debug, Default)]
struct State {
    records: BTreeMap<QuestionId, BankRecord>,
    /// Insertion order of question ids.
    order: Vec<QuestionId>,
    jobs: BTreeMap<JobId, JobRecord>,
    job_order: Vec<JobId>,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Job(job) => {
                if !self.jobs.contains_key(&job.id) {
                    self.job_order.push(job.id.clone());
                }
                self.jobs.insert(job.id.clone(), *job);
            }
            Event::Record(rec) => {
                if !self.records.contains_key(&rec.question.id) {
                    self.order.push(rec.question.id.clone());
                }
                self.records.insert(rec.question.id.clone(), *rec);
            }
        }
    }
}

/// Reads are concurrent; writes go through one writer lock.
#[derive(Debug)]
pub struct Bank {
    path: Option<PathBuf>,
    state: RwLock<State>,
    writer: Mutex<Option<File>>,
}

impl Bank {
    pub fn in_memory() -> Self {
        Bank {
            path: None,
            state: RwLock::new(State::default()),
            writer: Mutex::new(None),
        }
    }

    /// Opens or creates the bank file and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BankError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut state = State::default();
        let mut keep_len: Option<u64> = None;
        let mut needs_newline = false;
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            needs_newline = bytes.last().is_some_and(|&b| b != b'\n');
            let mut offset = 0usize;
            let mut line_no = 0usize;
            while offset < bytes.len() {
                let end = bytes[offset..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |i| offset + i);
                line_no += 1;
                let line = String::from_utf8_lossy(&bytes[offset..end]);
                let is_last = end + 1 >= bytes.len();
                if !line.trim().is_empty() {
                    match serde_json::from_str::<Event>(&line) {
                        Ok(event) => state.apply(event),
                        Err(e) if is_last => {
                            log::warn!("dropping torn final line {line_no} of {}: {e}", path.display());
                            keep_len = Some(offset as u64);
                            needs_newline = false;
                        }
                        Err(e) => {
                            return Err(BankError::Corrupt {
                                line: line_no,
                                message: e.to_string(),
                            })
                        }
                    }
                }
                offset = end + 1;
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if let Some(len) = keep_len {
            file.set_len(len)?;
            file.sync_data()?;
        } else if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(Bank {
            path: Some(path),
            state: RwLock::new(state),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Persists then applies. Caller holds the writer lock.
    fn commit(&self, file: &mut Option<File>, events: Vec<Event>) -> Result<(), BankError> {
        if events.is_empty() {
            return Ok(());
        }
        if let Some(f) = file.as_mut() {
            let mut buf = Vec::new();
            for e in &events {
                serde_json::to_writer(&mut buf, e).map_err(std::io::Error::from)?;
                buf.push(b'\n');
            }
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        let mut state = self.state.write().expect("bank state lock");
        for e in events {
            state.apply(e);
        }
        Ok(())
    }

    fn lock_writer(&self) -> std::sync::MutexGuard<'_, Option<File>> {
        self.writer.lock().expect("bank writer lock")
    }

    pub fn put_job(&self, job: &JobRecord) -> Result<(), BankError> {
        let mut w = self.lock_writer();
        self.commit(&mut w, vec![Event::Job(Box::new(job.clone()))])
    }

    pub fn get_job(&self, id: &JobId) -> Option<JobRecord> {
        self.state.read().expect("bank state lock").jobs.get(id).cloned()
    }

    /// Jobs in creation order.
    pub fn jobs(&self) -> Vec<JobRecord> {
        let s = self.state.read().expect("bank state lock");
        s.job_order.iter().map(|id| s.jobs[id].clone()).collect()
    }

    /// Stores questions under `job_id`. Re-putting identical content is a
    /// no-op; an id owned by another job is refused and nothing is written.
    pub fn put_questions(&self, job_id: &JobId, questions: &[Question]) -> Result<(), BankError> {
        self.put_inner(job_id, questions.iter().map(|q| (q, None)).collect())
    }

    /// Like [`Bank::put_questions`], also recording each question's findings.
    pub fn put_validated(
        &self,
        job_id: &JobId,
        items: &[(Question, Vec<Finding>)],
    ) -> Result<(), BankError> {
        self.put_inner(job_id, items.iter().map(|(q, f)| (q, Some(f.clone()))).collect())
    }

    fn put_inner(
        &self,
        job_id: &JobId,
        items: Vec<(&Question, Option<Vec<Finding>>)>,
    ) -> Result<(), BankError> {
        let mut seen = HashSet::new();
        for (q, _) in &items {
            if !seen.insert(&q.id) {
                return Err(BankError::DuplicateInBatch(q.id.to_string()));
            }
        }
        let mut w = self.lock_writer();
        let mut events = Vec::new();
        {
            let s = self.state.read().expect("bank state lock");
            let now = Utc::now();
            for (q, findings) in items {
                if let Some(existing) = s.records.get(&q.id) {
                    if &existing.job_id != job_id {
                        return Err(BankError::DuplicateId {
                            id: q.id.to_string(),
                            existing_job: existing.job_id.to_string(),
                        });
                    }
                    let same_validation = findings.is_none() || findings == existing.validation;
                    if &existing.question == q && same_validation {
                        continue;
                    }
                }
                events.push(Event::Record(Box::new(BankRecord {
                    question: q.clone(),
                    job_id: job_id.clone(),
                    validation: findings,
                    updated_at: now,
                })));
            }
        }
        self.commit(&mut w, events)
    }

    pub fn get(&self, id: &QuestionId) -> Option<BankRecord> {
        self.state.read().expect("bank state lock").records.get(id).cloned()
    }

    /// Records in insertion order, optionally restricted to one job.
    pub fn list(&self, job: Option<&JobId>) -> Vec<BankRecord> {
        let s = self.state.read().expect("bank state lock");
        s.order
            .iter()
            .map(|id| &s.records[id])
            .filter(|r| job.is_none_or(|j| &r.job_id == j))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("bank state lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn update<F>(&self, id: &QuestionId, change: F) -> Result<BankRecord, BankError>
    where
        F: FnOnce(&mut BankRecord) -> Result<(), BankError>,
    {
        let mut w = self.lock_writer();
        let mut rec = self.get(id).ok_or_else(|| BankError::UnknownId(id.to_string()))?;
        change(&mut rec)?;
        rec.updated_at = Utc::now().max(rec.updated_at + chrono::Duration::microseconds(1));
        self.commit(&mut w, vec![Event::Record(Box::new(rec.clone()))])?;
        Ok(rec)
    }

    pub fn set_status(&self, id: &QuestionId, status: CurationStatus) -> Result<BankRecord, BankError> {
        self.update(id, |rec| {
            let from = rec.question.status;
            if !from.can_transition_to(status) {
                return Err(BankError::IllegalTransition { from, to: status });
            }
            rec.question.status = status;
            Ok(())
        })
    }

    /// Replaces question content, keeping id, job, and status.
    pub fn replace_question(
        &self,
        id: &QuestionId,
        question: Question,
        validation: Option<Vec<Finding>>,
    ) -> Result<BankRecord, BankError> {
        self.update(id, |rec| {
            let status = rec.question.status;
            rec.question = Question {
                id: rec.question.id.clone(),
                status,
                ..question
            };
            rec.validation = validation;
            Ok(())
        })
    }

    /// Accepted questions matching `filter`, in difficulty, ordinal, id order.
    pub fn assemble(&self, filter: &ExamFilter) -> ExamDocument {
        let s = self.state.read().expect("bank state lock");
        let mut picked: Vec<&BankRecord> = s
            .records
            .values()
            .filter(|r| r.question.status == CurationStatus::Accepted)
            .filter(|r| filter.kinds.is_empty() || filter.kinds.contains(&r.question.kind))
            .filter(|r| filter.admits_difficulty(r.question.difficulty))
            .filter(|r| match &filter.target_language {
                None => true,
                Some(lang) => s
                    .jobs
                    .get(&r.job_id)
                    .is_some_and(|j| j.spec.target_language.eq_ignore_ascii_case(lang)),
            })
            .collect();
        picked.sort_by(|a, b| {
            let key = |r: &BankRecord| (r.question.difficulty, r.question.ordinal);
            key(a).cmp(&key(b)).then_with(|| a.question.id.cmp(&b.question.id))
        });
        if let Some(limit) = filter.limit {
            picked.truncate(limit);
        }
        let questions: Vec<Question> = picked.into_iter().map(|r| r.question.clone()).collect();
        ExamDocument {
            title: filter.title.clone().unwrap_or_else(|| "Exam".into()),
            spec_summary: summarize(&questions, filter.target_language.as_deref()),
            questions,
            answer_key_separate: filter.answer_key_separate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamFilter {
    #[serde(default)]
    pub kinds: Vec<QuestionKind>,
    #[serde(default)]
    pub min_difficulty: Option<Difficulty>,
    #[serde(default)]
    pub max_difficulty: Option<Difficulty>,
    #[serde(default)]
    pub target_language: Option<String>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub answer_key_separate: bool,
}

impl ExamFilter {
    /// Questions without a difficulty only pass an unbounded range.
    fn admits_difficulty(&self, d: Option<Difficulty>) -> bool {
        match (d, self.min_difficulty, self.max_difficulty) {
            (_, None, None) => true,
            (None, _, _) => false,
            (Some(d), lo, hi) => lo.is_none_or(|lo| d >= lo) && hi.is_none_or(|hi| d <= hi),
        }
    }
}

fn summarize(questions: &[Question], language: Option<&str>) -> String {
    let mut kinds: Vec<&str> = questions.iter().map(|q| q.kind.slug()).collect();
    kinds.sort_unstable();
    kinds.dedup();
    let dist = DifficultyDistribution::tally(questions.iter().filter_map(|q| q.difficulty));
    let levels = dist
        .iter()
        .filter(|(_, c)| *c > 0)
        .map(|(d, c)| format!("{d}: {c}"))
        .collect::<Vec<_>>()
        .join(", ");
    let mut out = format!("{} question{}", questions.len(), if questions.len() == 1 { "" } else { "s" });
    if let Some(lang) = language {
        out.push_str(&format!("; {lang}"));
    }
    if !kinds.is_empty() {
        out.push_str(&format!("; {}", kinds.join(", ")));
    }
    if !levels.is_empty() {
        out.push_str(&format!("; difficulty {levels}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamDocument {
    pub title: String,
    pub spec_summary: String,
    pub questions: Vec<Question>,
    pub answer_key_separate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Markdown,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ExportFormat::Markdown),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown export format {other:?}; expected markdown or json")),
        }
    }
}

pub const SCHEMA_VERSION: &str = "1";

/// The published JSON schema for [`ExportFormat::Json`].
pub const EXAM_DOCUMENT_SCHEMA: &str = include_str!("../schema/exam-document.v1.json");

#[derive(Serialize)]
struct JsonDocument<'a> {
    schema_version: &'static str,
    title: &'a str,
    spec_summary: &'a str,
    answer_key_separate: bool,
    questions: &'a [Question],
}

/// Heading numbers: source ordinals when they increase strictly, else
/// positions.
fn display_numbers(questions: &[Question]) -> Vec<u32> {
    let increasing = questions.windows(2).all(|w| w[0].ordinal < w[1].ordinal)
        && questions.first().is_none_or(|q| q.ordinal > 0);
    if increasing {
        questions.iter().map(|q| q.ordinal).collect()
    } else {
        (1..=questions.len() as u32).collect()
    }
}

pub fn export(doc: &ExamDocument, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => {
            let body = JsonDocument {
                schema_version: SCHEMA_VERSION,
                title: &doc.title,
                spec_summary: &doc.spec_summary,
                answer_key_separate: doc.answer_key_separate,
                questions: &doc.questions,
            };
            let mut out = serde_json::to_vec_pretty(&body).expect("document serializes");
            out.push(b'\n');
            out
        }
        ExportFormat::Markdown => export_markdown(doc).into_bytes(),
    }
}

fn export_markdown(doc: &ExamDocument) -> String {
    let mut out = format!("# {}\n\n{}\n\n", doc.title, doc.spec_summary);
    let numbers = display_numbers(&doc.questions);
    let blocks: Vec<String> = doc
        .questions
        .iter()
        .zip(&numbers)
        .map(|(q, n)| {
            render_question(
                q,
                RenderStyle {
                    letter_labels: true,
                    include_answer: !doc.answer_key_separate,
                    number: Some(*n),
                },
            )
        })
        .collect();
    out.push_str(&blocks.join("\n"));
    if doc.answer_key_separate && !doc.questions.is_empty() {
        out.push_str("\n## Answer Key\n\n");
        let keys: Vec<String> = doc
            .questions
            .iter()
            .zip(&numbers)
            .map(|(q, n)| {
                let mut k = heading(*n, q);
                k.push_str("\n\n");
                k.push_str(&render_answer(q, true));
                if let Some(e) = render_explanation(q) {
                    k.push('\n');
                    k.push_str(&e);
                }
                k
            })
            .collect();
        out.push_str(&keys.join("\n"));
    }
    out
}
