//! Structural, distributional and execution checks over a parsed exam.

pub mod execution;
pub mod sandbox;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use execution::{
    default_parallelism, execute_plan, normalize_output, plan_execution, syntax_check,
    verify_all, verify_by_execution, verify_with_driver, Driver, ExecutionPlan, ExecutionVerdict,
    Expectation, Outcome, SyntaxVerdict,
};
pub use sandbox::{canonical_language, RunOutput, SandboxConfig, SandboxError, Toolchain};

use crate::parser::options_share_style;
use crate::taxonomy::{
    Difficulty, DifficultyDistribution, ExamSpec, Question, QuestionId, QuestionKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingSeverity {
    Info,
    Warning,
    Error,
}

/// The closed set of finding codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCode {
    CountMismatch,
    DistributionMismatch,
    KindMismatch,
    TooFewOptions,
    OptionsOnNonMcq,
    MixedOptionStyle,
    DuplicateOptionLabel,
    AnswerNotInOptions,
    AnswerKindMismatch,
    DifficultyMissing,
    EmptyStem,
    ExplanationMissing,
    DuplicateStem,
    ExecutionVerified,
    ExecutionMismatch,
    ExecutionFailed,
    ExecutionTimeout,
    ExecutionUnsupported,
}

impl FindingCode {
    pub const ALL: [FindingCode; 18] = [
        FindingCode::CountMismatch,
        FindingCode::DistributionMismatch,
        FindingCode::KindMismatch,
        FindingCode::TooFewOptions,
        FindingCode::OptionsOnNonMcq,
        FindingCode::MixedOptionStyle,
        FindingCode::DuplicateOptionLabel,
        FindingCode::AnswerNotInOptions,
        FindingCode::AnswerKindMismatch,
        FindingCode::DifficultyMissing,
        FindingCode::EmptyStem,
        FindingCode::ExplanationMissing,
        FindingCode::DuplicateStem,
        FindingCode::ExecutionVerified,
        FindingCode::ExecutionMismatch,
        FindingCode::ExecutionFailed,
        FindingCode::ExecutionTimeout,
        FindingCode::ExecutionUnsupported,
    ];

    pub fn severity(self) -> FindingSeverity {
        use FindingCode::*;
        match self {
            ExplanationMissing | DuplicateStem | ExecutionTimeout => FindingSeverity::Warning,
            ExecutionVerified | ExecutionUnsupported => FindingSeverity::Info,
            _ => FindingSeverity::Error,
        }
    }

    pub fn as_str(self) -> &'static str {
        use FindingCode::*;
        match self {
            CountMismatch => "CountMismatch",
            DistributionMismatch => "DistributionMismatch",
            KindMismatch => "KindMismatch",
            TooFewOptions => "TooFewOptions",
            OptionsOnNonMcq => "OptionsOnNonMcq",
            MixedOptionStyle => "MixedOptionStyle",
            DuplicateOptionLabel => "DuplicateOptionLabel",
            AnswerNotInOptions => "AnswerNotInOptions",
            AnswerKindMismatch => "AnswerKindMismatch",
            DifficultyMissing => "DifficultyMissing",
            EmptyStem => "EmptyStem",
            ExplanationMissing => "ExplanationMissing",
            DuplicateStem => "DuplicateStem",
            ExecutionVerified => "ExecutionVerified",
            ExecutionMismatch => "ExecutionMismatch",
            ExecutionFailed => "ExecutionFailed",
            ExecutionTimeout => "ExecutionTimeout",
            ExecutionUnsupported => "ExecutionUnsupported",
        }
    }

    pub fn from_outcome(outcome: Outcome) -> Self {
        match outcome {
            Outcome::Verified => FindingCode::ExecutionVerified,
            Outcome::Mismatch => FindingCode::ExecutionMismatch,
            Outcome::ExecutionError => FindingCode::ExecutionFailed,
            Outcome::Timeout => FindingCode::ExecutionTimeout,
            Outcome::Unsupported => FindingCode::ExecutionUnsupported,
        }
    }
}

impl std::fmt::Display for FindingCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: FindingSeverity,
    pub code: FindingCode,
    #[serde(default)]
    pub question_id: Option<QuestionId>,
    pub message: String,
}

impl Finding {
    /// Severity comes from the code.
    pub fn new(code: FindingCode, question_id: Option<QuestionId>, message: impl Into<String>) -> Self {
        Finding {
            severity: code.severity(),
            code,
            question_id,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == FindingSeverity::Error
    }
}

pub const CHECK_COUNT: &str = "count";
pub const CHECK_DISTRIBUTION: &str = "distribution";
pub const CHECK_STRUCTURE: &str = "structure";
pub const CHECK_DUPLICATE_STEMS: &str = "duplicate_stems";
pub const CHECK_EXECUTION: &str = "execution";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub checks_run: Vec<String>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(findings: Vec<Finding>, checks_run: Vec<String>) -> Self {
        let passed = !findings.iter().any(Finding::is_error);
        ValidationReport {
            findings,
            checks_run,
            passed,
        }
    }

    /// Adds one finding, keeping `passed` consistent.
    pub fn push(&mut self, finding: Finding) {
        if finding.is_error() {
            self.passed = false;
        }
        self.findings.push(finding);
    }

    pub fn has(&self, code: FindingCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.is_error())
    }

    pub fn count(&self, severity: FindingSeverity) -> usize {
        self.findings.iter().filter(|f| f.severity == severity).count()
    }

    /// Findings attached to one question.
    pub fn for_question<'a>(&'a self, id: &'a QuestionId) -> impl Iterator<Item = &'a Finding> + 'a {
        self.findings
            .iter()
            .filter(move |f| f.question_id.as_ref() == Some(id))
    }

    /// Folds execution verdicts in as findings.
    pub fn add_execution(&mut self, verdicts: &[(QuestionId, ExecutionVerdict)]) {
        if !self.checks_run.iter().any(|c| c == CHECK_EXECUTION) {
            self.checks_run.push(CHECK_EXECUTION.into());
        }
        for (id, v) in verdicts {
            let message = match v.outcome {
                Outcome::Mismatch => format!(
                    "{}; expected {:?}, observed {:?}",
                    v.detail,
                    v.expected,
                    normalize_output(&v.observed_stdout)
                ),
                _ => v.detail.clone(),
            };
            self.push(Finding::new(FindingCode::from_outcome(v.outcome), Some(id.clone()), message));
        }
    }
}

fn level_list(levels: &[(Difficulty, u32, u32)]) -> String {
    levels
        .iter()
        .map(|(d, want, got)| format!("level {}: expected {want}, found {got}", d.level()))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks applying to a single question, independent of the rest of the exam.
pub fn validate_question(question: &Question, kind: QuestionKind) -> Vec<Finding> {
    let id = Some(question.id.clone());
    let mut out = Vec::new();
    let mut push = |code: FindingCode, msg: String| out.push(Finding::new(code, id.clone(), msg));
    let n = question.ordinal;

    if question.kind != kind {
        push(
            FindingCode::KindMismatch,
            format!("question {n} is {} but the exam is {}", question.kind.slug(), kind.slug()),
        );
    }
    if question.stem.trim().is_empty() && question.code_blocks.is_empty() {
        push(FindingCode::EmptyStem, format!("question {n} has no stem"));
    }
    if question.difficulty.is_none() {
        push(FindingCode::DifficultyMissing, format!("question {n} has no difficulty"));
    }
    if question.explanation.trim().is_empty() {
        push(FindingCode::ExplanationMissing, format!("question {n} has no explanation"));
    }

    match question.kind {
        QuestionKind::MultipleChoice => {
            if question.options.len() < 2 {
                push(
                    FindingCode::TooFewOptions,
                    format!("question {n} has {} option(s); at least 2 required", question.options.len()),
                );
            }
            if !options_share_style(&question.options) {
                push(FindingCode::MixedOptionStyle, format!("question {n} mixes letter and number labels"));
            }
            let mut seen = HashMap::new();
            for opt in &question.options {
                if seen.insert(opt.label.as_str(), ()).is_some() {
                    push(
                        FindingCode::DuplicateOptionLabel,
                        format!("question {n} repeats option label {:?}", opt.label),
                    );
                }
            }
            if question.answer.is_option_based() {
                for label in question.answer.option_labels() {
                    if question.option(label).is_none() {
                        push(
                            FindingCode::AnswerNotInOptions,
                            format!("question {n} answers {label:?}, which is not among its options"),
                        );
                    }
                }
            } else {
                push(
                    FindingCode::AnswerKindMismatch,
                    format!("question {n} is multiple-choice but its answer is not an option label"),
                );
            }
        }
        QuestionKind::ShortAnswer | QuestionKind::Essay => {
            if !question.options.is_empty() {
                push(FindingCode::OptionsOnNonMcq, format!("question {n} lists options but is not multiple-choice"));
            }
            if question.answer.is_option_based() {
                push(
                    FindingCode::AnswerKindMismatch,
                    format!("question {n} answers with option labels but is not multiple-choice"),
                );
            }
        }
    }
    out
}

/// Stem plus code, lowercased with whitespace collapsed.
fn stem_key(q: &Question) -> String {
    let mut key = q.stem.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    for b in &q.code_blocks {
        key.push('\u{0}');
        key.push_str(&b.source.split_whitespace().collect::<Vec<_>>().join(" "));
    }
    key
}

/// Runs the count, distribution, structure and duplicate-stem checks in that
/// order. Pure.
pub fn validate(questions: &[Question], spec: &ExamSpec) -> ValidationReport {
    let mut findings = Vec::new();

    if questions.len() as u64 != u64::from(spec.total) {
        findings.push(Finding::new(
            FindingCode::CountMismatch,
            None,
            format!("expected {} questions, found {}", spec.total, questions.len()),
        ));
    }

    let found = DifficultyDistribution::tally(questions.iter().filter_map(|q| q.difficulty));
    let differing: Vec<(Difficulty, u32, u32)> = Difficulty::all()
        .map(|d| (d, spec.distribution.count(d), found.count(d)))
        .filter(|(_, want, got)| want != got)
        .collect();
    if !differing.is_empty() {
        findings.push(Finding::new(
            FindingCode::DistributionMismatch,
            None,
            level_list(&differing),
        ));
    }

    for q in questions {
        findings.extend(validate_question(q, spec.kind));
    }

    let mut by_stem: BTreeMap<String, Vec<&Question>> = BTreeMap::new();
    for q in questions {
        let key = stem_key(q);
        if !key.trim_matches('\u{0}').is_empty() {
            by_stem.entry(key).or_default().push(q);
        }
    }
    let mut dupes: Vec<&Question> = by_stem
        .values()
        .filter(|g| g.len() > 1)
        .flat_map(|g| g[1..].iter().copied())
        .collect();
    dupes.sort_by_key(|q| q.ordinal);
    for q in dupes {
        findings.push(Finding::new(
            FindingCode::DuplicateStem,
            Some(q.id.clone()),
            format!("question {} repeats an earlier stem", q.ordinal),
        ));
    }

    ValidationReport::new(
        findings,
        [CHECK_COUNT, CHECK_DISTRIBUTION, CHECK_STRUCTURE, CHECK_DUPLICATE_STEMS]
            .map(String::from)
            .to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{AnswerKey, CurationStatus, OptionItem, Provenance};

    fn mcq(ordinal: u32, level: u8, answer: &str) -> Question {
        Question {
            id: QuestionId::random(),
            ordinal,
            kind: QuestionKind::MultipleChoice,
            qtype: None,
            difficulty: Difficulty::new(level),
            stem: format!("Stem {ordinal}?"),
            code_blocks: Vec::new(),
            options: ["a", "b", "c", "d"]
                .iter()
                .map(|l| OptionItem::new(*l, format!("opt {l}")))
                .collect(),
            answer: AnswerKey::SingleOption { label: answer.into() },
            explanation: "because".into(),
            status: CurationStatus::Draft,
            provenance: Provenance::unattributed(),
        }
    }

    fn spec(counts: [u32; 5]) -> ExamSpec {
        ExamSpec::new(
            QuestionKind::MultipleChoice,
            "Python",
            vec!["loops".into()],
            DifficultyDistribution::new(counts),
        )
    }

    fn exam(counts: [u32; 5]) -> Vec<Question> {
        let mut out = Vec::new();
        for (i, c) in counts.iter().enumerate() {
            for _ in 0..*c {
                out.push(mcq(out.len() as u32 + 1, i as u8 + 1, "a"));
            }
        }
        out
    }

    #[test]
    fn matching_exam_passes() {
        let r = validate(&exam([3, 3, 5, 5, 4]), &spec([3, 3, 5, 5, 4]));
        assert!(r.passed, "{:?}", r.findings);
        assert_eq!(r.checks_run, ["count", "distribution", "structure", "duplicate_stems"]);
    }

    #[test]
    fn relabel_names_both_levels() {
        let mut qs = exam([3, 3, 5, 5, 4]);
        let last = qs.last_mut().unwrap();
        last.difficulty = Difficulty::new(4);
        let r = validate(&qs, &spec([3, 3, 5, 5, 4]));
        assert!(!r.passed);
        let f = r.findings.iter().find(|f| f.code == FindingCode::DistributionMismatch).unwrap();
        assert!(f.message.contains("level 4: expected 5, found 6"), "{}", f.message);
        assert!(f.message.contains("level 5: expected 4, found 3"), "{}", f.message);
        assert!(!r.has(FindingCode::CountMismatch));
    }

    #[test]
    fn answer_outside_options() {
        let q = mcq(1, 1, "e");
        let f = validate_question(&q, QuestionKind::MultipleChoice);
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].code, FindingCode::AnswerNotInOptions);
    }

    #[test]
    fn warnings_do_not_fail() {
        let mut qs = exam([1, 0, 0, 0, 0]);
        qs[0].explanation.clear();
        let r = validate(&qs, &spec([1, 0, 0, 0, 0]));
        assert!(r.passed);
        assert!(r.has(FindingCode::ExplanationMissing));
    }

    #[test]
    fn duplicate_stems_consider_code() {
        let mut qs = exam([2, 0, 0, 0, 0]);
        qs[1].stem = qs[0].stem.clone();
        assert!(validate(&qs, &spec([2, 0, 0, 0, 0])).has(FindingCode::DuplicateStem));
        qs[0].code_blocks.push(crate::taxonomy::CodeBlock::new("python", "print(1)"));
        assert!(!validate(&qs, &spec([2, 0, 0, 0, 0])).has(FindingCode::DuplicateStem));
    }

    #[test]
    fn every_code_has_a_fixed_severity() {
        for code in FindingCode::ALL {
            let f = Finding::new(code, None, "");
            assert_eq!(f.severity, code.severity());
            assert_eq!(serde_json::to_value(code).unwrap(), code.as_str());
        }
    }

    #[test]
    fn kind_and_options_on_essay() {
        let mut q = mcq(1, 2, "a");
        q.kind = QuestionKind::Essay;
        let codes: Vec<_> = validate_question(&q, QuestionKind::MultipleChoice)
            .into_iter()
            .map(|f| f.code)
            .collect();
        assert!(codes.contains(&FindingCode::KindMismatch));
        assert!(codes.contains(&FindingCode::OptionsOnNonMcq));
        assert!(codes.contains(&FindingCode::AnswerKindMismatch));
    }
}
