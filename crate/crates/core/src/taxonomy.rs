//! Domain model: question kinds, the question-type taxonomy, difficulty,
//! exam specifications and parsed question records.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionKind {
    MultipleChoice,
    ShortAnswer,
    Essay,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 3] = [
        QuestionKind::MultipleChoice,
        QuestionKind::ShortAnswer,
        QuestionKind::Essay,
    ];

    /// Label used inside the "Question type: [...]" template line.
    pub fn template_label(self) -> &'static str {
        match self {
            QuestionKind::MultipleChoice => "Multiple-choice",
            QuestionKind::ShortAnswer => "short-answer",
            QuestionKind::Essay => "Essay",
        }
    }

    /// Stable lowercase identifier used by the CLI and query strings.
    pub fn slug(self) -> &'static str {
        match self {
            QuestionKind::MultipleChoice => "multiple-choice",
            QuestionKind::ShortAnswer => "short-answer",
            QuestionKind::Essay => "essay",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiple-choice" | "multiplechoice" | "mcq" => Some(QuestionKind::MultipleChoice),
            "short-answer" | "shortanswer" | "short" => Some(QuestionKind::ShortAnswer),
            "essay" => Some(QuestionKind::Essay),
            _ => None,
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

macro_rules! question_types {
    ($( $variant:ident => $kind:ident, $desc:literal; )*) => {
        /// The nineteen question archetypes, each owned by exactly one kind.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum QuestionType {
            $( $variant, )*
        }

        impl QuestionType {
            /// Every variant in taxonomy order.
            pub const ALL: &'static [QuestionType] = &[ $( QuestionType::$variant, )* ];

            pub fn kind(self) -> QuestionKind {
                match self {
                    $( QuestionType::$variant => QuestionKind::$kind, )*
                }
            }

            /// The line rendered under `#Question Types` in a prompt.
            pub fn description(self) -> &'static str {
                match self {
                    $( QuestionType::$variant => $desc, )*
                }
            }
        }
    };
}

question_types! {
    OutputOrErrorSelection => MultipleChoice, "Select the correct answer related to the execution result or the cause of an error in a given code snippet";
    MultiCorrectBehavior => MultipleChoice, "Choose multiple correct answers related to the behavior or execution result of a code snippet";
    StepOrdering => MultipleChoice, "Arrange code snippets or algorithm steps in the correct execution sequence";
    FillInBlankChoice => MultipleChoice, "Fill in the blank with appropriate keywords or function names from the given options";
    AlgorithmSelection => MultipleChoice, "Select the most suitable algorithm or programming approach for a given problem scenario";
    TermDefinitionMatching => MultipleChoice, "Match programming terms with their definitions";
    ProgramAssembly => MultipleChoice, "Select the correct combination of code snippets or options to create a valid program";
    OutputCauseAnalysis => MultipleChoice, "Analyze the output of a code snippet and identify the cause of the result";
    BehaviorDescriptionMatch => MultipleChoice, "Select the explanation that matches the behavior or definition of a code snippet or algorithm";
    ModificationPrediction => MultipleChoice, "Predict the result of modifying or replacing parts of a code snippet";
    PredictOutput => ShortAnswer, "Predict the output of the provided code";
    FillMissingCode => ShortAnswer, "Fill in the missing parts of the program or complete the entire code";
    DataDrivenCompletion => ShortAnswer, "Analyze the provided table or graph and complete the missing parts of the program or complete the entire code";
    CodeFromOutput => ShortAnswer, "Generate code to match a given output";
    CodeFromConditions => ShortAnswer, "Write code based on detailed instructions and conditions provided";
    MultiFunctionProgram => ShortAnswer, "Create complete programs with multiple functions addressing various requirements";
    TermExplanation => Essay, "Explain specific programming terms";
    ErrorCauseAnalysis => Essay, "Analyze the cause of errors in provided code and explain";
    CodeImprovement => Essay, "Identify problems in given code and propose improvements";
}

/// Types owned by `kind`, in taxonomy order.
pub fn question_types_for(kind: QuestionKind) -> Vec<QuestionType> {
    QuestionType::ALL
        .iter()
        .copied()
        .filter(|t| t.kind() == kind)
        .collect()
}

/// Difficulty level in `1..=5`, rendered as `n/5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Difficulty(u8);

impl Difficulty {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(level: u8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&level).then_some(Difficulty(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Difficulty> {
        (Self::MIN..=Self::MAX).map(Difficulty)
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/5", self.0)
    }
}

impl<'de> Deserialize<'de> for Difficulty {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let level = u8::deserialize(d)?;
        Difficulty::new(level)
            .ok_or_else(|| serde::de::Error::custom(format!("difficulty {level} outside 1..=5")))
    }
}

/// Question counts per difficulty level. All five levels are always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DifficultyDistribution {
    counts: [u32; 5],
}

impl DifficultyDistribution {
    pub fn new(counts: [u32; 5]) -> Self {
        DifficultyDistribution { counts }
    }

    /// Everything at one level.
    pub fn concentrated(level: Difficulty, count: u32) -> Self {
        let mut counts = [0; 5];
        counts[usize::from(level.0 - 1)] = count;
        DifficultyDistribution { counts }
    }

    pub fn count(&self, level: Difficulty) -> u32 {
        self.counts[usize::from(level.0 - 1)]
    }

    pub fn set(&mut self, level: Difficulty, count: u32) {
        self.counts[usize::from(level.0 - 1)] = count;
    }

    pub fn counts(&self) -> [u32; 5] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Difficulty, u32)> + '_ {
        Difficulty::all().map(move |d| (d, self.count(d)))
    }

    /// Tally a multiset of difficulties.
    pub fn tally<I: IntoIterator<Item = Difficulty>>(levels: I) -> Self {
        let mut counts = [0u32; 5];
        for d in levels {
            counts[usize::from(d.0 - 1)] += 1;
        }
        DifficultyDistribution { counts }
    }
}

impl Serialize for DifficultyDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<String, u32> = self
            .iter()
            .map(|(d, c)| (d.level().to_string(), c))
            .collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DifficultyDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, u32>::deserialize(d)?;
        let mut counts = [0u32; 5];
        for (key, count) in map {
            let level = key
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(Difficulty::new)
                .ok_or_else(|| {
                    serde::de::Error::custom(format!("difficulty key {key:?} is not one of \"1\"..\"5\""))
                })?;
            counts[usize::from(level.0 - 1)] = count;
        }
        Ok(DifficultyDistribution { counts })
    }
}

pub const DEFAULT_CRITERIA: [&str; 3] = [
    "Single-topic questions",
    "Questions integrating multiple topics",
    "Questions assessing creativity and problem-solving skills",
];

fn default_criteria() -> Vec<String> {
    DEFAULT_CRITERIA.iter().map(|s| s.to_string()).collect()
}

fn default_role_noun() -> String {
    "expert".to_string()
}

/// Declarative description of one single-kind exam to generate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamSpec {
    pub kind: QuestionKind,
    pub target_language: String,
    pub scope_topics: Vec<String>,
    pub total: u32,
    pub distribution: DifficultyDistribution,
    pub enabled_types: Vec<QuestionType>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<String>,
    #[serde(default = "default_role_noun")]
    pub role_noun: String,
    #[serde(default)]
    pub few_shot_examples: Option<Vec<String>>,
}

impl ExamSpec {
    /// A spec with default criteria and role enabling every type of `kind`.
    pub fn new(
        kind: QuestionKind,
        target_language: impl Into<String>,
        scope_topics: Vec<String>,
        distribution: DifficultyDistribution,
    ) -> Self {
        ExamSpec {
            kind,
            target_language: target_language.into(),
            scope_topics,
            total: distribution.total() as u32,
            distribution,
            enabled_types: question_types_for(kind),
            criteria: default_criteria(),
            role_noun: default_role_noun(),
            few_shot_examples: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("ExamSpec serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "code", rename_all = "PascalCase")]
pub enum SpecError {
    #[error("distribution sums to {sum} but total is {total}")]
    DistributionMismatch { sum: u64, total: u32 },
    #[error("enabled type {qtype:?} belongs to {actual} but the exam is {expected}")]
    KindMismatch {
        qtype: QuestionType,
        expected: QuestionKind,
        actual: QuestionKind,
    },
    #[error("scope_topics is empty")]
    EmptyScope,
    #[error("total must be at least 1")]
    ZeroTotal,
    #[error("enabled_types is empty")]
    NoEnabledTypes,
    #[error("target_language is empty")]
    EmptyLanguage,
    #[error("few-shot prompting needs at least two examples, got one")]
    FewShotTooSmall,
}

impl SpecError {
    pub fn code(&self) -> &'static str {
        match self {
            SpecError::DistributionMismatch { .. } => "DistributionMismatch",
            SpecError::KindMismatch { .. } => "KindMismatch",
            SpecError::EmptyScope => "EmptyScope",
            SpecError::ZeroTotal => "ZeroTotal",
            SpecError::NoEnabledTypes => "NoEnabledTypes",
            SpecError::EmptyLanguage => "EmptyLanguage",
            SpecError::FewShotTooSmall => "FewShotTooSmall",
        }
    }
}

/// Checks every `ExamSpec` invariant, reporting each violation separately.
pub fn validate_spec(spec: &ExamSpec) -> Result<(), Vec<SpecError>> {
    let mut errors = Vec::new();
    if spec.scope_topics.iter().all(|t| t.trim().is_empty()) {
        errors.push(SpecError::EmptyScope);
    }
    if spec.total == 0 {
        errors.push(SpecError::ZeroTotal);
    }
    if spec.target_language.trim().is_empty() {
        errors.push(SpecError::EmptyLanguage);
    }
    let sum = spec.distribution.total();
    if sum != u64::from(spec.total) {
        errors.push(SpecError::DistributionMismatch {
            sum,
            total: spec.total,
        });
    }
    if spec.enabled_types.is_empty() {
        errors.push(SpecError::NoEnabledTypes);
    }
    for &qtype in &spec.enabled_types {
        if qtype.kind() != spec.kind {
            errors.push(SpecError::KindMismatch {
                qtype,
                expected: spec.kind,
                actual: qtype.kind(),
            });
        }
    }
    if matches!(&spec.few_shot_examples, Some(ex) if ex.len() == 1) {
        errors.push(SpecError::FewShotTooSmall);
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(String);

impl QuestionId {
    pub fn random() -> Self {
        QuestionId(format!("q-{}", Uuid::new_v4().simple()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for QuestionId {
    fn from(s: &str) -> Self {
        QuestionId(s.to_string())
    }
}

impl From<String> for QuestionId {
    fn from(s: String) -> Self {
        QuestionId(s)
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn random() -> Self {
        JobId(format!("job-{}", Uuid::new_v4().simple()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for JobId {
    fn from(s: &str) -> Self {
        JobId(s.to_string())
    }
}

impl From<String> for JobId {
    fn from(s: String) -> Self {
        JobId(s)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelStyle {
    Letter,
    Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionItem {
    pub label: String,
    pub text: String,
}

impl OptionItem {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        OptionItem {
            label: label.into(),
            text: text.into(),
        }
    }

    pub fn style(&self) -> Option<LabelStyle> {
        label_style(&self.label)
    }
}

pub fn label_style(label: &str) -> Option<LabelStyle> {
    if !label.is_empty() && label.chars().all(|c| c.is_ascii_digit()) {
        Some(LabelStyle::Number)
    } else if label.len() == 1 && label.chars().all(|c| c.is_ascii_lowercase()) {
        Some(LabelStyle::Letter)
    } else {
        None
    }
}

/// Maps `"1"` to `"a"`, `"2"` to `"b"` and so on; letter labels pass through.
pub fn letter_label(label: &str) -> String {
    match label.parse::<u8>() {
        Ok(n @ 1..=26) => char::from(b'a' + n - 1).to_string(),
        _ => label.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBlock {
    pub language_hint: String,
    pub source: String,
}

impl CodeBlock {
    pub fn new(language_hint: impl Into<String>, source: impl Into<String>) -> Self {
        CodeBlock {
            language_hint: language_hint.into(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnswerKey {
    SingleOption {
        label: String,
    },
    MultiOption {
        labels: Vec<String>,
    },
    Text {
        text: String,
    },
    Code {
        code: CodeBlock,
        /// Prose preceding the code inside the answer section.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<String>,
        /// Prose following the code inside the answer section.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_behavior: Option<String>,
    },
}

impl AnswerKey {
    pub fn option_labels(&self) -> Vec<&str> {
        match self {
            AnswerKey::SingleOption { label } => vec![label.as_str()],
            AnswerKey::MultiOption { labels } => labels.iter().map(String::as_str).collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_option_based(&self) -> bool {
        matches!(self, AnswerKey::SingleOption { .. } | AnswerKey::MultiOption { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurationStatus {
    Draft,
    Accepted,
    Rejected,
}

impl CurationStatus {
    /// Draft -> {Accepted, Rejected}, Rejected -> Draft. Accepted is terminal.
    pub fn can_transition_to(self, next: CurationStatus) -> bool {
        use CurationStatus::*;
        matches!(
            (self, next),
            (Draft, Accepted) | (Draft, Rejected) | (Rejected, Draft)
        )
    }
}

impl fmt::Display for CurationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// SHA-256 of the prompt text, lowercase hex.
pub fn prompt_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_digest: String,
    pub model_id: String,
    pub provider: String,
    pub created_at: DateTime<Utc>,
    /// Byte range of the question's block inside the raw response.
    #[serde(default)]
    pub raw_span: Option<Range<usize>>,
}

impl Provenance {
    pub fn unattributed() -> Self {
        Provenance {
            prompt_digest: String::new(),
            model_id: String::new(),
            provider: String::new(),
            created_at: Utc::now(),
            raw_span: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub ordinal: u32,
    pub kind: QuestionKind,
    #[serde(default)]
    pub qtype: Option<QuestionType>,
    pub difficulty: Option<Difficulty>,
    pub stem: String,
    #[serde(default)]
    pub code_blocks: Vec<CodeBlock>,
    #[serde(default)]
    pub options: Vec<OptionItem>,
    pub answer: AnswerKey,
    pub explanation: String,
    pub status: CurationStatus,
    pub provenance: Provenance,
}

impl Question {
    /// Compares everything a rendered question carries: ignores id, status and
    /// provenance.
    pub fn content_eq(&self, other: &Question) -> bool {
        self.ordinal == other.ordinal
            && self.kind == other.kind
            && self.difficulty == other.difficulty
            && self.stem == other.stem
            && self.code_blocks == other.code_blocks
            && self.options == other.options
            && self.answer == other.answer
            && self.explanation == other.explanation
    }

    /// Same question with number-style option labels rewritten as letters.
    pub fn with_letter_labels(&self) -> Question {
        let mut q = self.clone();
        for opt in &mut q.options {
            opt.label = letter_label(&opt.label);
        }
        q.answer = match q.answer {
            AnswerKey::SingleOption { label } => AnswerKey::SingleOption {
                label: letter_label(&label),
            },
            AnswerKey::MultiOption { labels } => AnswerKey::MultiOption {
                labels: labels.iter().map(|l| letter_label(l)).collect(),
            },
            other => other,
        };
        q
    }

    pub fn option(&self, label: &str) -> Option<&OptionItem> {
        self.options.iter().find(|o| o.label == label)
    }
}
