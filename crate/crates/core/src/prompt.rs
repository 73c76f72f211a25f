//! Renders an [`ExamSpec`] into the sectioned prompt text sent to the model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{
    prompt_digest, validate_spec, Difficulty, DifficultyDistribution, ExamSpec, Question,
    QuestionKind, SpecError,
};

pub const SECTION_DIRECTIVE: &str = "#Directive";
pub const SECTION_SCOPE: &str = "#Scope";
pub const SECTION_BASIC: &str = "#Basic Information";
pub const SECTION_CRITERIA: &str = "#Question Criteria";
pub const SECTION_TYPES: &str = "#Question Types";
pub const SECTION_EXAMPLES: &str = "#Examples";
pub const SECTION_CONSTRAINTS: &str = "#Constraints";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub digest: String,
    /// Byte ranges of each section (header line included).
    pub section_spans: BTreeMap<String, Range<usize>>,
}

impl PromptText {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.section_spans.get(name).map(|r| &self.text[r.clone()])
    }

    /// Section names in the order they appear in the text.
    pub fn section_order(&self) -> Vec<&str> {
        let mut spans: Vec<_> = self.section_spans.iter().collect();
        spans.sort_by_key(|(_, r)| r.start);
        spans.into_iter().map(|(n, _)| n.as_str()).collect()
    }

    fn append_section(&mut self, name: &str, body: &str) {
        if !self.text.is_empty() && !self.text.ends_with("\n\n") {
            if !self.text.ends_with('\n') {
                self.text.push('\n');
            }
            self.text.push('\n');
        }
        let start = self.text.len();
        self.text.push_str(name);
        self.text.push('\n');
        self.text.push_str(body);
        if !self.text.ends_with('\n') {
            self.text.push('\n');
        }
        self.section_spans
            .insert(name.to_string(), start..self.text.len());
        self.digest = prompt_digest(&self.text);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("invalid exam spec: {}", .0.iter().map(|e| e.code()).collect::<Vec<_>>().join(", "))]
    InvalidSpec(Vec<SpecError>),
    #[error("few-shot prompting needs at least two examples, got one")]
    FewShotTooSmall,
    #[error("rejected question is {actual} but the spec is {expected}")]
    KindMismatch {
        expected: QuestionKind,
        actual: QuestionKind,
    },
    #[error("rejected question has no difficulty to regenerate at")]
    MissingDifficulty,
}

fn plural(count: u32) -> &'static str {
    if count == 1 {
        "question"
    } else {
        "questions"
    }
}

fn instruction_line(kind: QuestionKind) -> &'static str {
    match kind {
        QuestionKind::ShortAnswer => {
            "Please refer to the template below and create high-quality questions."
        }
        _ => "Please refer to the template and create high-quality questions.",
    }
}

fn distribution_heading(kind: QuestionKind) -> &'static str {
    match kind {
        QuestionKind::MultipleChoice => "5-level difficulty distribution:",
        _ => "Difficulty distribution:",
    }
}

/// Renders the five template sections, then any few-shot examples the spec
/// carries.
pub fn render_prompt(spec: &ExamSpec) -> Result<PromptText, PromptError> {
    validate_spec(spec).map_err(PromptError::InvalidSpec)?;

    let mut prompt = PromptText {
        text: String::new(),
        digest: String::new(),
        section_spans: BTreeMap::new(),
    };

    let directive = format!(
        "You are a [{}] {} responsible for creating exam questions.\n{}\n",
        spec.target_language,
        spec.role_noun,
        instruction_line(spec.kind)
    );
    prompt.append_section(SECTION_DIRECTIVE, &directive);

    let scope: String = spec
        .scope_topics
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| format!("- {}\n", t.trim()))
        .collect();
    prompt.append_section(SECTION_SCOPE, &scope);

    let mut basic = String::new();
    let _ = writeln!(basic, "- Question type: [{}]", spec.kind.template_label());
    let _ = writeln!(basic, "- Programming language: [{}]", spec.target_language);
    let _ = writeln!(
        basic,
        "- Number of questions: [{} {}]",
        spec.total,
        plural(spec.total)
    );
    let _ = writeln!(basic, "- {}", distribution_heading(spec.kind));
    for (level, count) in spec.distribution.iter().filter(|&(_, c)| c > 0) {
        let _ = writeln!(basic, "  - {}: [{} {}]", level, count, plural(count));
    }
    basic.push_str("- Provide questions, answers, and explanations\n");
    basic.push_str("- Specify difficulty for each question\n");
    if spec.kind == QuestionKind::MultipleChoice {
        basic.push_str("- Deliver all questions at once\n");
    }
    prompt.append_section(SECTION_BASIC, &basic);

    let criteria: String = spec.criteria.iter().map(|c| format!("- {c}\n")).collect();
    prompt.append_section(SECTION_CRITERIA, &criteria);

    let types: String = spec
        .enabled_types
        .iter()
        .map(|t| format!("- {}\n", t.description()))
        .collect();
    prompt.append_section(SECTION_TYPES, &types);

    match &spec.few_shot_examples {
        Some(examples) if !examples.is_empty() => inject_few_shot(prompt, examples),
        _ => Ok(prompt),
    }
}

/// Appends an `#Examples` section holding `examples` verbatim. An empty list
/// returns the prompt unchanged.
pub fn inject_few_shot<S: AsRef<str>>(
    mut prompt: PromptText,
    examples: &[S],
) -> Result<PromptText, PromptError> {
    match examples.len() {
        0 => return Ok(prompt),
        1 => return Err(PromptError::FewShotTooSmall),
        _ => {}
    }
    let mut body = String::new();
    for (i, example) in examples.iter().enumerate() {
        if i > 0 {
            body.push('\n');
        }
        let _ = writeln!(body, "Example {}:", i + 1);
        body.push_str(example.as_ref());
        if !body.ends_with('\n') {
            body.push('\n');
        }
    }
    prompt.append_section(SECTION_EXAMPLES, &body);
    Ok(prompt)
}

/// The spec narrowed to a single question at the rejected item's level.
pub fn narrow_for_regeneration(
    spec: &ExamSpec,
    rejected: &Question,
) -> Result<ExamSpec, PromptError> {
    if rejected.kind != spec.kind {
        return Err(PromptError::KindMismatch {
            expected: spec.kind,
            actual: rejected.kind,
        });
    }
    let level: Difficulty = rejected.difficulty.ok_or(PromptError::MissingDifficulty)?;
    let mut narrowed = spec.clone();
    narrowed.total = 1;
    narrowed.distribution = DifficultyDistribution::concentrated(level, 1);
    Ok(narrowed)
}

/// Prompt for replacing one rejected question without repeating the others.
pub fn render_regeneration_prompt<S: AsRef<str>>(
    spec: &ExamSpec,
    rejected: &Question,
    existing_stems: &[S],
) -> Result<PromptText, PromptError> {
    let narrowed = narrow_for_regeneration(spec, rejected)?;
    let mut prompt = render_prompt(&narrowed)?;
    let stems: Vec<&str> = existing_stems
        .iter()
        .map(|s| s.as_ref().trim())
        .filter(|s| !s.is_empty())
        .collect();
    if !stems.is_empty() {
        let mut body =
            String::from("- Do not duplicate any of the following existing questions:\n");
        for stem in stems {
            let one_line = stem.split_whitespace().collect::<Vec<_>>().join(" ");
            let _ = writeln!(body, "  - {one_line}");
        }
        prompt.append_section(SECTION_CONSTRAINTS, &body);
    }
    Ok(prompt)
}
