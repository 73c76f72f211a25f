//! Tolerant parser turning raw model output into [`Question`] records.
//!
//! The grammar is a union of recognized line patterns rather than a strict
//! grammar: numbered question headings in several styles, `Level n/5`
//! section headings, `Answer:` / `Explanation:` markers (optionally bulleted
//! or emphasized), letter or number option lines, and fenced code. Anything
//! the parser cannot place becomes a [`Diagnostic`].
//!
//! Spans are byte ranges into the input after CRLF line endings have been
//! folded to LF.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{
    label_style, AnswerKey, CodeBlock, CurationStatus, Difficulty, ExamSpec, LabelStyle,
    OptionItem, Provenance, Question, QuestionId, QuestionKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub message: String,
    pub span: Range<usize>,
}

impl Diagnostic {
    fn new(severity: Severity, code: &str, message: impl Into<String>, span: Range<usize>) -> Self {
        Diagnostic {
            severity,
            code: code.to_string(),
            message: message.into(),
            span,
        }
    }
}

/// Diagnostic codes emitted by [`parse_exam`].
pub mod codes {
    pub const EMPTY_INPUT: &str = "EmptyInput";
    pub const NO_QUESTION_HEADINGS: &str = "NoQuestionHeadings";
    pub const UNRECOGNIZED_BLOCK: &str = "UnrecognizedBlock";
    pub const ANSWER_MISSING: &str = "AnswerMissing";
    pub const ANSWER_UNPARSEABLE: &str = "AnswerUnparseable";
    pub const TOO_FEW_OPTIONS: &str = "TooFewOptions";
    pub const EXPLANATION_MISSING: &str = "ExplanationMissing";
    pub const DIFFICULTY_MISSING: &str = "DifficultyMissing";
    pub const UNTERMINATED_FENCE: &str = "UnterminatedFence";
    pub const MIXED_OPTION_STYLE: &str = "MixedOptionStyle";
    pub const DUPLICATE_OPTION_LABEL: &str = "DuplicateOptionLabel";
    pub const ORDINAL_RENUMBERED: &str = "OrdinalRenumbered";
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub questions: Vec<Question>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseResult {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Warning)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("no Answer marker found")]
    AnswerMissing,
    #[error("answer section is empty")]
    AnswerEmpty,
    #[error("could not read an option label from {0:?}")]
    Unparseable(String),
}

const EMPH: &str = r"(?:\*\*|__)?";

static HEADING_NUMBERED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*#{{0,6}}\s*{EMPH}\s*(\d{{1,4}})\s*[.)]\s*{EMPH}\s*(?i:question)\b(?:\s*\(([^)]*)\))?\s*{EMPH}\s*:?\s*{EMPH}\s*(.*)$"
    ))
    .unwrap()
});

static HEADING_Q: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*#{{0,6}}\s*{EMPH}\s*Q(\d{{1,4}})\s*[.:)]\s*{EMPH}\s*(.*)$"
    ))
    .unwrap()
});

static HEADING_WORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*#{{0,6}}\s*{EMPH}\s*(?i:question)\s+(\d{{1,4}})(?:\s*\(([^)]*)\))?\s*{EMPH}\s*(?:[.:]\s*{EMPH}\s*(.*))?$"
    ))
    .unwrap()
});

static LEVEL_HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*#{{0,6}}\s*{EMPH}\s*(?i:(?:difficulty\s+)?level)\s+(\d)\s*/\s*5\b"
    ))
    .unwrap()
});

const BULLET: &str = r"(?:[•·▪◦]\s*|[-*+]\s+)?";

static DIFFICULTY_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*{BULLET}{EMPH}\s*(?i:difficulty(?:\s+level)?)\s*{EMPH}\s*[:\-]\s*{EMPH}\s*(?i:level\s*)?(\d)(?:\s*/\s*5)?\b"
    ))
    .unwrap()
});

static ANSWER_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*{BULLET}{EMPH}\s*(?i:(?:correct\s+)?answer)\s*{EMPH}\s*:\s*{EMPH}\s?(.*)$"
    ))
    .unwrap()
});

static EXPLANATION_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*{BULLET}{EMPH}\s*(?i:explanation)\s*{EMPH}\s*:\s*{EMPH}\s?(.*)$"
    ))
    .unwrap()
});

static LETTER_OPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"^\s*{BULLET}{EMPH}\s*\(?([a-hA-H])[).]\s*{EMPH}\s+(.*)$"
    ))
    .unwrap()
});

static NUMBER_OPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(r"^\s*{BULLET}{EMPH}\s*\(?([1-8])[.)]\s*{EMPH}\s+(.*)$")).unwrap()
});

static LEVEL_IN_TEXT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\d)\s*/\s*5\b").unwrap());

const KNOWN_LANGUAGES: &[&str] = &[
    "python", "python3", "py", "cpp", "c++", "c", "java", "javascript", "js", "typescript",
    "ts", "rust", "go", "bash", "sh", "kotlin", "csharp", "c#",
];

/// One line of the input with its byte offset.
#[derive(Debug, Clone, Copy)]
struct Line<'a> {
    text: &'a str,
    start: usize,
}

impl Line<'_> {
    fn end(&self) -> usize {
        self.start + self.text.len()
    }
}

fn split_lines(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for piece in text.split_inclusive('\n') {
        let body = piece.strip_suffix('\n').unwrap_or(piece);
        out.push(Line { text: body, start });
        start += piece.len();
    }
    out
}

fn fence_marker(line: &str) -> Option<(&str, &str)> {
    let t = line.trim_start();
    let indent = line.len() - t.len();
    if indent > 3 {
        return None;
    }
    let ticks = t.len() - t.trim_start_matches('`').len();
    if ticks >= 3 {
        return Some((&t[..ticks], &t[ticks..]));
    }
    let tildes = t.len() - t.trim_start_matches('~').len();
    if tildes >= 3 {
        return Some((&t[..tildes], &t[tildes..]));
    }
    None
}

/// A region of lines that is either prose or a fenced block.
#[derive(Debug, Clone)]
enum Chunk<'a> {
    Prose(Line<'a>),
    Fence {
        block: CodeBlock,
        span: Range<usize>,
        terminated: bool,
    },
}

fn chunk_lines<'a>(lines: &[Line<'a>]) -> Vec<Chunk<'a>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let Some((marker, info)) = fence_marker(line.text) else {
            out.push(Chunk::Prose(line));
            i += 1;
            continue;
        };
        let fence_char = marker.chars().next().unwrap();
        let mut hint = info.trim().to_ascii_lowercase();
        let mut j = i + 1;
        if hint.is_empty() {
            if let Some(next) = lines.get(j) {
                let candidate = next.text.trim().to_ascii_lowercase();
                if KNOWN_LANGUAGES.contains(&candidate.as_str()) {
                    hint = candidate;
                    j += 1;
                }
            }
        }
        let body_start = j;
        let mut terminated = false;
        while j < lines.len() {
            if let Some((close, rest)) = fence_marker(lines[j].text) {
                if close.starts_with(fence_char) && close.len() >= marker.len() && rest.trim().is_empty() {
                    terminated = true;
                    break;
                }
            }
            j += 1;
        }
        let mut source = String::new();
        for l in &lines[body_start..j] {
            source.push_str(l.text);
            source.push('\n');
        }
        let end_line = if terminated { j } else { j.saturating_sub(1).max(i) };
        let span = line.start..lines[end_line].end();
        out.push(Chunk::Fence {
            block: CodeBlock::new(hint, source),
            span,
            terminated,
        });
        i = if terminated { j + 1 } else { j };
    }
    out
}

/// All fenced regions of `block`, in document order.
pub fn extract_code_blocks(block: &str) -> Vec<CodeBlock> {
    let normalized = block.replace("\r\n", "\n");
    let lines = split_lines(&normalized);
    chunk_lines(&lines)
        .into_iter()
        .filter_map(|c| match c {
            Chunk::Fence { block, .. } => Some(block),
            Chunk::Prose(_) => None,
        })
        .collect()
}

fn strip_emphasis(text: &str) -> &str {
    let t = text.trim();
    for marker in ["**", "__"] {
        if let Some(inner) = t.strip_prefix(marker).and_then(|s| s.strip_suffix(marker)) {
            if !inner.contains(marker) {
                return inner.trim();
            }
        }
    }
    t
}

fn match_option(line: &str) -> Option<(LabelStyle, OptionItem)> {
    if let Some(c) = LETTER_OPTION.captures(line) {
        let text = strip_emphasis(&c[2]);
        if !text.is_empty() {
            return Some((
                LabelStyle::Letter,
                OptionItem::new(c[1].to_ascii_lowercase(), text),
            ));
        }
    }
    if let Some(c) = NUMBER_OPTION.captures(line) {
        let text = strip_emphasis(&c[2]);
        if !text.is_empty() {
            return Some((LabelStyle::Number, OptionItem::new(&c[1], text)));
        }
    }
    None
}

struct OptionScan {
    options: Vec<OptionItem>,
    /// Option-looking lines that were not taken (other style or duplicate label).
    rejected: Vec<(usize, &'static str)>,
}

/// Option lines among `lines`; `lines[i]` indices of taken options are
/// returned through `taken`.
fn scan_options(lines: &[&str], taken: &mut Vec<bool>) -> OptionScan {
    taken.clear();
    taken.resize(lines.len(), false);
    let mut style = None;
    let mut options: Vec<OptionItem> = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let Some((s, item)) = match_option(line) else {
            continue;
        };
        match style {
            None => style = Some(s),
            Some(existing) if existing != s => {
                rejected.push((i, codes::MIXED_OPTION_STYLE));
                continue;
            }
            _ => {}
        }
        if options.iter().any(|o| o.label == item.label) {
            rejected.push((i, codes::DUPLICATE_OPTION_LABEL));
            continue;
        }
        taken[i] = true;
        options.push(item);
    }
    OptionScan { options, rejected }
}

/// Letter-style (`a) text`) or number-style (`1. text`) options found in
/// `block`. The first style seen wins; fenced code is skipped.
pub fn extract_options(block: &str) -> Vec<OptionItem> {
    let normalized = block.replace("\r\n", "\n");
    let lines = split_lines(&normalized);
    let prose: Vec<&str> = chunk_lines(&lines)
        .into_iter()
        .filter_map(|c| match c {
            Chunk::Prose(l) => Some(l.text),
            Chunk::Fence { .. } => None,
        })
        .collect();
    let mut taken = Vec::new();
    scan_options(&prose, &mut taken).options
}

fn normalize_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
            other => other,
        })
        .collect()
}

/// Reads option labels from the start of an answer line: `c)`, `c`, `3.`,
/// `(b)`, or a list such as `a, c` / `a and c`.
fn parse_labels(raw: &str) -> Option<Vec<String>> {
    let cleaned = normalize_quotes(raw).replace("**", "").replace("__", "")
        .replace(['`', '"', '\''], "");
    let s = cleaned.trim_start_matches(|c: char| c.is_whitespace() || c == '•');
    let bytes: Vec<char> = s.chars().collect();
    let mut pos = 0;
    let mut labels: Vec<String> = Vec::new();

    loop {
        while pos < bytes.len() && bytes[pos] == ' ' {
            pos += 1;
        }
        let open_paren = bytes.get(pos) == Some(&'(');
        if open_paren {
            pos += 1;
        }
        let label = match bytes.get(pos) {
            Some(c) if c.is_ascii_alphabetic() && ('a'..='h').contains(&c.to_ascii_lowercase()) => {
                pos += 1;
                c.to_ascii_lowercase().to_string()
            }
            Some(c) if c.is_ascii_digit() => {
                let start = pos;
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                bytes[start..pos].iter().collect::<String>()
            }
            _ => break,
        };
        // a label must be followed by a terminator, a separator or the end
        let next = bytes.get(pos).copied();
        let terminated = matches!(next, Some(')') | Some('.') | Some(':'));
        if terminated {
            pos += 1;
        } else if open_paren {
            break;
        }
        let rest: String = bytes[pos..].iter().collect();
        let rest_trim = rest.trim_start();
        let at_end = rest_trim.is_empty();
        let sep_len = if rest_trim.starts_with(',') || rest_trim.starts_with('&') {
            Some(1)
        } else if rest_trim.get(..4).is_some_and(|w| w.eq_ignore_ascii_case("and ")) {
            Some(4)
        } else {
            None
        };
        if !(terminated || at_end || sep_len.is_some()) {
            break;
        }
        if !labels.contains(&label) {
            labels.push(label);
        }
        match sep_len {
            Some(n) if !terminated || rest_trim.len() < 40 => {
                let skipped = rest.len() - rest_trim.len() + n;
                pos += rest[..skipped].chars().count();
            }
            _ => break,
        }
    }
    if labels.is_empty() {
        None
    } else {
        Some(labels)
    }
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let first = lines.iter().position(|l| !l.trim().is_empty());
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    match (first, last) {
        (Some(f), Some(l)) => lines[f..=l]
            .iter()
            .map(|s| s.trim_end())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

/// Splits a section into prose before the first fence, that fence, and the
/// raw text after it.
fn answer_section_to_key(
    lines: &[Line<'_>],
    options: &[OptionItem],
    kind: QuestionKind,
) -> Result<AnswerKey, AnswerError> {
    if lines.iter().all(|l| l.text.trim().is_empty()) {
        return Err(AnswerError::AnswerEmpty);
    }
    if kind == QuestionKind::MultipleChoice {
        let first = lines
            .iter()
            .map(|l| l.text.trim())
            .find(|t| !t.is_empty())
            .unwrap_or_default();
        if let Some(labels) = parse_labels(first) {
            return Ok(if labels.len() == 1 {
                AnswerKey::SingleOption {
                    label: labels.into_iter().next().unwrap(),
                }
            } else {
                AnswerKey::MultiOption { labels }
            });
        }
        let wanted = normalize_quotes(strip_emphasis(first));
        if let Some(opt) = options
            .iter()
            .find(|o| normalize_quotes(&o.text).eq_ignore_ascii_case(&wanted))
        {
            return Ok(AnswerKey::SingleOption {
                label: opt.label.clone(),
            });
        }
        return Err(AnswerError::Unparseable(first.to_string()));
    }

    let chunks = chunk_lines(lines);
    let fence_at = chunks
        .iter()
        .position(|c| matches!(c, Chunk::Fence { .. }));
    match fence_at {
        None => {
            let texts: Vec<&str> = lines.iter().map(|l| l.text).collect();
            Ok(AnswerKey::Text {
                text: trim_blank_lines(&texts),
            })
        }
        Some(idx) => {
            let before: Vec<&str> = chunks[..idx]
                .iter()
                .filter_map(|c| match c {
                    Chunk::Prose(l) => Some(l.text),
                    _ => None,
                })
                .collect();
            let Chunk::Fence { block, span, .. } = &chunks[idx] else {
                unreachable!()
            };
            let after: Vec<&str> = lines
                .iter()
                .filter(|l| l.start >= span.end)
                .map(|l| l.text)
                .collect();
            let context = trim_blank_lines(&before);
            let expected = trim_blank_lines(&after);
            Ok(AnswerKey::Code {
                code: block.clone(),
                context: (!context.is_empty()).then_some(context),
                expected_behavior: (!expected.is_empty()).then_some(expected),
            })
        }
    }
}

/// Reads the answer from a question block (or bare answer section) that
/// contains an `Answer:` marker.
pub fn extract_answer(
    block: &str,
    options: &[OptionItem],
    kind: QuestionKind,
) -> Result<AnswerKey, AnswerError> {
    let normalized = block.replace("\r\n", "\n");
    let lines = split_lines(&normalized);
    let sections = sectionize(&lines);
    let answer = sections.answer.ok_or(AnswerError::AnswerMissing)?;
    answer_section_to_key(&answer, options, kind)
}

#[derive(Default)]
struct Sections<'a> {
    pre: Vec<Line<'a>>,
    answer: Option<Vec<Line<'a>>>,
    explanation: Option<Vec<Line<'a>>>,
    difficulty_tag: Option<Difficulty>,
    answer_marker_span: Option<Range<usize>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Region {
    Pre,
    Answer,
    Explanation,
}

/// Distributes lines among the pre-answer region, the answer section and the
/// explanation section. Markers inside fences are ignored.
fn sectionize<'a>(lines: &[Line<'a>]) -> Sections<'a> {
    let mut sections = Sections::default();
    let mut region = Region::Pre;
    let mut in_fence: Option<(char, usize)> = None;

    for &line in lines {
        if let Some((ch, len)) = in_fence {
            if let Some((close, rest)) = fence_marker(line.text) {
                if close.starts_with(ch) && close.len() >= len && rest.trim().is_empty() {
                    in_fence = None;
                }
            }
            push_region(&mut sections, region, line);
            continue;
        }
        if let Some((marker, _)) = fence_marker(line.text) {
            in_fence = Some((marker.chars().next().unwrap(), marker.len()));
            push_region(&mut sections, region, line);
            continue;
        }
        if let Some(c) = DIFFICULTY_TAG.captures(line.text) {
            if let Some(d) = c[1].parse().ok().and_then(Difficulty::new) {
                sections.difficulty_tag.get_or_insert(d);
                continue;
            }
        }
        if let Some(c) = ANSWER_MARKER.captures(line.text) {
            if sections.answer.is_none() {
                region = Region::Answer;
                let rest = c.get(1).unwrap();
                sections.answer_marker_span = Some(line.start..line.end());
                sections.answer = Some(vec![Line {
                    text: rest.as_str(),
                    start: line.start + rest.start(),
                }]);
                continue;
            }
        }
        if let Some(c) = EXPLANATION_MARKER.captures(line.text) {
            if sections.explanation.is_none() {
                region = Region::Explanation;
                let rest = c.get(1).unwrap();
                sections.explanation = Some(vec![Line {
                    text: rest.as_str(),
                    start: line.start + rest.start(),
                }]);
                continue;
            }
        }
        push_region(&mut sections, region, line);
    }
    sections
}

fn push_region<'a>(sections: &mut Sections<'a>, region: Region, line: Line<'a>) {
    match region {
        Region::Pre => sections.pre.push(line),
        Region::Answer => sections.answer.get_or_insert_with(Vec::new).push(line),
        Region::Explanation => sections
            .explanation
            .get_or_insert_with(Vec::new)
            .push(line),
    }
}

struct Heading<'a> {
    number: u32,
    difficulty: Option<Difficulty>,
    rest: Option<Line<'a>>,
}

fn difficulty_in(text: &str) -> Option<Difficulty> {
    LEVEL_IN_TEXT
        .captures(text)
        .and_then(|c| c[1].parse().ok())
        .and_then(Difficulty::new)
}

fn match_heading<'a>(line: Line<'a>) -> Option<Heading<'a>> {
    let (caps, paren_group, rest_group) = if let Some(c) = HEADING_NUMBERED.captures(line.text) {
        (c, Some(2), 3)
    } else if let Some(c) = HEADING_Q.captures(line.text) {
        (c, None, 2)
    } else {
        (HEADING_WORD.captures(line.text)?, Some(2), 3)
    };
    let number = caps[1].parse().ok()?;
    let difficulty = paren_group
        .and_then(|g| caps.get(g))
        .and_then(|m| difficulty_in(m.as_str()));
    let rest = caps.get(rest_group).and_then(|m| {
        let text = m.as_str().trim_end();
        let text = text.strip_suffix("**").unwrap_or(text).trim_end();
        (!text.trim().is_empty()).then(|| Line {
            text,
            start: line.start + m.start(),
        })
    });
    Some(Heading {
        number,
        difficulty,
        rest,
    })
}

struct RawBlock<'a> {
    heading: Heading<'a>,
    lines: Vec<Line<'a>>,
    span: Range<usize>,
    inherited: Option<Difficulty>,
}

/// Parses raw model output against the exam it was generated for. Never
/// fails: problems are reported as diagnostics.
pub fn parse_exam(text: &str, spec: &ExamSpec) -> ParseResult {
    parse_exam_as(text, spec.kind)
}

/// [`parse_exam`] given only the expected question kind.
pub fn parse_exam_as(text: &str, kind: QuestionKind) -> ParseResult {
    let mut result = ParseResult::default();
    let normalized = text.replace("\r\n", "\n");
    if normalized.trim().is_empty() {
        result.diagnostics.push(Diagnostic::new(
            Severity::Error,
            codes::EMPTY_INPUT,
            "response is empty",
            0..normalized.len(),
        ));
        return result;
    }
    let lines = split_lines(&normalized);

    let mut blocks: Vec<RawBlock> = Vec::new();
    let mut preamble: Vec<Line> = Vec::new();
    let mut level_context: Option<Difficulty> = None;
    let mut in_fence: Option<(char, usize)> = None;

    for &line in &lines {
        let mut structural = false;
        if let Some((ch, len)) = in_fence {
            if let Some((close, rest)) = fence_marker(line.text) {
                if close.starts_with(ch) && close.len() >= len && rest.trim().is_empty() {
                    in_fence = None;
                }
            }
        } else if let Some((marker, _)) = fence_marker(line.text) {
            in_fence = Some((marker.chars().next().unwrap(), marker.len()));
        } else if let Some(c) = LEVEL_HEADING.captures(line.text) {
            level_context = c[1].parse().ok().and_then(Difficulty::new);
            if let Some(b) = blocks.last_mut() {
                b.span.end = b.lines.last().map_or(b.span.end, |l| l.end());
            }
            // a level heading closes the current block
            blocks.push(RawBlock {
                heading: Heading {
                    number: 0,
                    difficulty: None,
                    rest: None,
                },
                lines: Vec::new(),
                span: line.start..line.end(),
                inherited: None,
            });
            structural = true;
        } else if let Some(h) = match_heading(line) {
            blocks.push(RawBlock {
                heading: h,
                lines: Vec::new(),
                span: line.start..line.end(),
                inherited: level_context,
            });
            structural = true;
        }
        if structural {
            continue;
        }
        match blocks.last_mut() {
            Some(b) if b.heading.number > 0 || b.heading.rest.is_some() => {
                b.span.end = line.end();
                b.lines.push(line);
            }
            Some(_) => {}
            None => preamble.push(line),
        }
    }
    // drop placeholder entries created for level headings
    blocks.retain(|b| b.heading.number > 0 || b.heading.rest.is_some());

    if blocks.is_empty() {
        let has_marker = lines.iter().any(|l| ANSWER_MARKER.is_match(l.text));
        result.diagnostics.push(Diagnostic::new(
            Severity::Error,
            if has_marker {
                codes::UNRECOGNIZED_BLOCK
            } else {
                codes::NO_QUESTION_HEADINGS
            },
            "no numbered question headings found",
            0..normalized.len(),
        ));
        return result;
    }
    if preamble.iter().any(|l| ANSWER_MARKER.is_match(l.text)) {
        let span = preamble[0].start..preamble.last().unwrap().end();
        result.diagnostics.push(Diagnostic::new(
            Severity::Error,
            codes::UNRECOGNIZED_BLOCK,
            "answer text appears before the first question heading",
            span,
        ));
    }

    let mut last_ordinal = 0u32;
    for block in blocks {
        if let Some(q) = parse_block(block, kind, &mut last_ordinal, &mut result.diagnostics) {
            result.questions.push(q);
        }
    }
    result
}

fn parse_block(
    block: RawBlock<'_>,
    kind: QuestionKind,
    last_ordinal: &mut u32,
    diags: &mut Vec<Diagnostic>,
) -> Option<Question> {
    let span = block.span.clone();
    let mut lines = Vec::with_capacity(block.lines.len() + 1);
    if let Some(rest) = block.heading.rest {
        lines.push(rest);
    }
    lines.extend(block.lines.iter().copied());
    let sections = sectionize(&lines);

    // pre-answer region: stem prose, code blocks and options
    let chunks = chunk_lines(&sections.pre);
    let mut code_blocks = Vec::new();
    let mut prose_runs: Vec<Vec<&str>> = vec![Vec::new()];
    let mut prose_lines: Vec<(usize, Line)> = Vec::new();
    for chunk in &chunks {
        match chunk {
            Chunk::Prose(l) => prose_lines.push((prose_runs.len() - 1, *l)),
            Chunk::Fence {
                block: cb,
                span: fspan,
                terminated,
            } => {
                if !terminated {
                    diags.push(Diagnostic::new(
                        Severity::Warning,
                        codes::UNTERMINATED_FENCE,
                        "code fence is not closed; consumed to end of block",
                        fspan.clone(),
                    ));
                }
                code_blocks.push(cb.clone());
                prose_runs.push(Vec::new());
            }
        }
    }

    let mut options = Vec::new();
    let mut taken = vec![false; prose_lines.len()];
    if kind == QuestionKind::MultipleChoice {
        let texts: Vec<&str> = prose_lines.iter().map(|(_, l)| l.text).collect();
        let scan = scan_options(&texts, &mut taken);
        for (idx, code) in scan.rejected {
            let l = prose_lines[idx].1;
            diags.push(Diagnostic::new(
                Severity::Warning,
                code,
                format!("option line not used: {:?}", l.text.trim()),
                l.start..l.end(),
            ));
        }
        options = scan.options;
    }
    // options split the stem the same way code does
    let mut run = 0usize;
    let mut prev_group = 0usize;
    let mut prev_taken = false;
    for (i, (group, l)) in prose_lines.iter().enumerate() {
        if *group != prev_group || (taken[i] && !prev_taken) {
            run += 1;
        }
        prev_group = *group;
        prev_taken = taken[i];
        if taken[i] {
            continue;
        }
        if prose_runs.len() <= run {
            prose_runs.resize_with(run + 1, Vec::new);
        }
        prose_runs[run].push(l.text);
    }
    let stem = prose_runs
        .iter()
        .map(|r| trim_blank_lines(r))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n");

    let Some(answer_lines) = sections.answer else {
        diags.push(Diagnostic::new(
            Severity::Error,
            codes::ANSWER_MISSING,
            format!("question {} has no Answer section", block.heading.number),
            span,
        ));
        return None;
    };
    if kind == QuestionKind::MultipleChoice && options.len() < 2 {
        diags.push(Diagnostic::new(
            Severity::Error,
            codes::TOO_FEW_OPTIONS,
            format!(
                "multiple-choice question {} has {} option(s)",
                block.heading.number,
                options.len()
            ),
            span,
        ));
        return None;
    }
    let answer = match answer_section_to_key(&answer_lines, &options, kind) {
        Ok(a) => a,
        Err(e) => {
            diags.push(Diagnostic::new(
                Severity::Error,
                match e {
                    AnswerError::AnswerMissing => codes::ANSWER_MISSING,
                    _ => codes::ANSWER_UNPARSEABLE,
                },
                format!("question {}: {e}", block.heading.number),
                sections.answer_marker_span.unwrap_or(span.clone()),
            ));
            return None;
        }
    };

    let explanation = sections
        .explanation
        .as_ref()
        .map(|ls| trim_blank_lines(&ls.iter().map(|l| l.text).collect::<Vec<_>>()))
        .unwrap_or_default();
    if explanation.is_empty() {
        diags.push(Diagnostic::new(
            Severity::Warning,
            codes::EXPLANATION_MISSING,
            format!("question {} has no explanation", block.heading.number),
            span.clone(),
        ));
    }

    let difficulty = sections
        .difficulty_tag
        .or(block.heading.difficulty)
        .or(block.inherited);
    if difficulty.is_none() {
        diags.push(Diagnostic::new(
            Severity::Warning,
            codes::DIFFICULTY_MISSING,
            format!("question {} has no difficulty", block.heading.number),
            span.clone(),
        ));
    }

    let ordinal = if block.heading.number > *last_ordinal {
        block.heading.number
    } else {
        let renumbered = *last_ordinal + 1;
        diags.push(Diagnostic::new(
            Severity::Warning,
            codes::ORDINAL_RENUMBERED,
            format!(
                "question number {} does not increase; renumbered to {renumbered}",
                block.heading.number
            ),
            span.clone(),
        ));
        renumbered
    };
    *last_ordinal = ordinal;

    let mut provenance = Provenance::unattributed();
    provenance.raw_span = Some(span);
    Some(Question {
        id: QuestionId::random(),
        ordinal,
        kind,
        qtype: None,
        difficulty,
        stem,
        code_blocks,
        options,
        answer,
        explanation,
        status: CurationStatus::Draft,
        provenance,
    })
}

/// Style check used by callers that build options by hand.
pub fn options_share_style(options: &[OptionItem]) -> bool {
    let mut styles = options.iter().map(|o| label_style(&o.label));
    match styles.next() {
        None => true,
        Some(first) => first.is_some() && styles.all(|s| s == first),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_from_answer_lines() {
        let cases: &[(&str, &[&str])] = &[
            ("c) Overwrites `data.txt` with \"Hello, World!\"", &["c"]),
            ("c", &["c"]),
            ("3.", &["3"]),
            ("**Answer:** 3".trim_start_matches("**Answer:** "), &["3"]),
            ("1. A is greater", &["1"]),
            ("(b) the second", &["b"]),
            ("a, c", &["a", "c"]),
            ("a and d", &["a", "d"]),
            ("B)", &["b"]),
        ];
        for (input, want) in cases {
            assert_eq!(
                parse_labels(input).unwrap(),
                want.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                "input {input:?}"
            );
        }
        assert_eq!(parse_labels("A shallow copy creates"), None);
        assert_eq!(parse_labels("Overwrites the file"), None);
    }

    #[test]
    fn headings_in_all_styles() {
        for (text, number) in [
            ("18. **Question:**", 18),
            ("1. Question:", 1),
            ("Q2. What is the output of the following code?", 2),
            ("**Question 4 (3/5)**", 4),
            ("### Question 7:", 7),
        ] {
            let h = match_heading(Line { text, start: 0 }).unwrap();
            assert_eq!(h.number, number, "{text}");
        }
        let h = match_heading(Line {
            text: "**Question 4 (3/5)**",
            start: 0,
        })
        .unwrap();
        assert_eq!(h.difficulty, Difficulty::new(3));
        assert!(match_heading(Line {
            text: "1. A is greater",
            start: 0
        })
        .is_none());
        assert!(match_heading(Line {
            text: "Question 2 asked about loops",
            start: 0
        })
        .is_none());
    }

    #[test]
    fn options_in_both_styles() {
        let letters = extract_options("a) one\nb) two\nc) three\nd) four\n");
        assert_eq!(
            letters.iter().map(|o| o.label.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c", "d"]
        );
        let numbers = extract_options("1. A is greater\n2. B is greater\n");
        assert_eq!(numbers[0], OptionItem::new("1", "A is greater"));
        assert!(extract_options("Just a paragraph of prose.\nAnother line.").is_empty());
        let mixed = extract_options("a) one\n2. two\nb) three\n");
        assert_eq!(mixed.len(), 2);
        assert!(mixed.iter().all(|o| o.style() == Some(LabelStyle::Letter)));
        let bold = extract_options("**a)** first\n- b) **second**\n");
        assert_eq!(bold[0].text, "first");
        assert_eq!(bold[1].text, "second");
    }

    #[test]
    fn code_blocks_preserve_source() {
        let blocks = extract_code_blocks("x\n```Python\nprint(1)\n  indented  \n```\ny\n");
        assert_eq!(blocks, vec![CodeBlock::new("python", "print(1)\n  indented  \n")]);
        assert!(extract_code_blocks("no fences here").is_empty());
        // bare fence followed by a language line
        let blocks = extract_code_blocks("```\ncpp\nint x;\n```\n");
        assert_eq!(blocks, vec![CodeBlock::new("cpp", "int x;\n")]);
        // unterminated fence consumes the rest
        let blocks = extract_code_blocks("```java\nclass A {}\nmore\n");
        assert_eq!(blocks[0].source, "class A {}\nmore\n");
    }

    #[test]
    fn answer_missing_and_text() {
        assert_eq!(
            extract_answer("Some stem\nExplanation: none", &[], QuestionKind::Essay),
            Err(AnswerError::AnswerMissing)
        );
        assert_eq!(
            extract_answer("Answer: 42\n", &[], QuestionKind::ShortAnswer).unwrap(),
            AnswerKey::Text { text: "42".into() }
        );
        let opts = vec![OptionItem::new("a", "Yes"), OptionItem::new("b", "No")];
        assert_eq!(
            extract_answer("Answer: No", &opts, QuestionKind::MultipleChoice).unwrap(),
            AnswerKey::SingleOption { label: "b".into() }
        );
        assert_eq!(
            extract_answer("Answer: a, b", &opts, QuestionKind::MultipleChoice).unwrap(),
            AnswerKey::MultiOption {
                labels: vec!["a".into(), "b".into()]
            }
        );
        assert_eq!(
            extract_answer("Answer: \u{201C}e\u{201D}", &opts, QuestionKind::MultipleChoice)
                .unwrap(),
            AnswerKey::SingleOption { label: "e".into() }
        );
    }

    #[test]
    fn empty_input() {
        let r = parse_exam_as("   \n", QuestionKind::MultipleChoice);
        assert!(r.questions.is_empty());
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.diagnostics[0].code, codes::EMPTY_INPUT);
    }

    #[test]
    fn missing_answer_skips_block() {
        let text = "1. Question:\nWhat?\n\n2. Question:\nWhy?\n\nAnswer: because\n\nExplanation:\nok\n";
        let r = parse_exam_as(text, QuestionKind::Essay);
        assert_eq!(r.questions.len(), 1);
        assert_eq!(r.questions[0].ordinal, 2);
        assert_eq!(r.errors().next().unwrap().code, codes::ANSWER_MISSING);
    }

    #[test]
    fn explanation_missing_is_warning() {
        let r = parse_exam_as("1. Question:\nWhat?\n\nAnswer: it\n", QuestionKind::ShortAnswer);
        assert_eq!(r.questions.len(), 1);
        assert_eq!(r.questions[0].explanation, "");
        assert!(r.warnings().any(|d| d.code == codes::EXPLANATION_MISSING));
        assert_eq!(r.errors().count(), 0);
    }

    #[test]
    fn level_headings_are_inherited_and_tags_override() {
        let text = "Level 2/5 (Easy)\n\n1. Question:\nA?\n\nAnswer: a\n\nExplanation: x\n\n\
                    2. Question:\nB?\nDifficulty: 4/5\n\nAnswer: b\n\nExplanation: y\n\n\
                    Level 3/5\n\n3. Question:\nC?\n\nAnswer: c\n\nExplanation: z\n";
        let r = parse_exam_as(text, QuestionKind::ShortAnswer);
        let levels: Vec<_> = r.questions.iter().map(|q| q.difficulty.unwrap().level()).collect();
        assert_eq!(levels, [2, 4, 3]);
        assert_eq!(r.questions[0].explanation, "x");
    }

    #[test]
    fn restarted_numbering_is_renumbered() {
        let text = "Level 1/5\n1. Question:\nA?\nAnswer: a\nExplanation: x\n\
                    Level 2/5\n1. Question:\nB?\nAnswer: b\nExplanation: y\n";
        let r = parse_exam_as(text, QuestionKind::Essay);
        let ords: Vec<_> = r.questions.iter().map(|q| q.ordinal).collect();
        assert_eq!(ords, [1, 2]);
        assert!(r.warnings().any(|d| d.code == codes::ORDINAL_RENUMBERED));
    }

    #[test]
    fn markers_inside_fences_are_ignored() {
        let text = "1. Question:\nWhat prints?\n```python\n# Answer: not a marker\nprint(1)\n```\n\nAnswer: 1\n\nExplanation: prints one\n";
        let r = parse_exam_as(text, QuestionKind::ShortAnswer);
        let q = &r.questions[0];
        assert_eq!(q.code_blocks.len(), 1);
        assert!(q.code_blocks[0].source.contains("# Answer: not a marker"));
        assert_eq!(q.answer, AnswerKey::Text { text: "1".into() });
    }

    #[test]
    fn crlf_is_folded() {
        let r = parse_exam_as(
            "1. Question:\r\nWhat?\r\n\r\nAnswer: yes\r\n\r\nExplanation: because\r\n",
            QuestionKind::Essay,
        );
        assert_eq!(r.questions[0].explanation, "because");
    }

    #[test]
    fn no_headings_is_an_error() {
        let r = parse_exam_as("Here are your questions!\n", QuestionKind::Essay);
        assert!(r.questions.is_empty());
        assert_eq!(r.errors().next().unwrap().code, codes::NO_QUESTION_HEADINGS);
    }
}
