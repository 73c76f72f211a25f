//! Execution-based answer verification.
//!
//! A question is turned into an [`ExecutionPlan`] (source, language and what
//! the run should produce), then executed in the sandbox. Plans are only built
//! from material the question itself carries; when there is nothing to check
//! the verdict is `Unsupported` rather than a guess.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::sandbox::{canonical_language, run_in_sandbox, run_source, SandboxConfig, SandboxError};
use crate::taxonomy::{AnswerKey, CodeBlock, Question, QuestionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Verified,
    Mismatch,
    ExecutionError,
    Timeout,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub outcome: Outcome,
    pub observed_stdout: String,
    pub expected: String,
    pub detail: String,
}

impl ExecutionVerdict {
    pub fn unsupported(detail: impl Into<String>) -> Self {
        ExecutionVerdict {
            outcome: Outcome::Unsupported,
            observed_stdout: String::new(),
            expected: String::new(),
            detail: detail.into(),
        }
    }
}

/// What a successful run must show.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expectation {
    Stdout(String),
    /// Nonzero exit with this name somewhere in stderr.
    Exception(String),
    /// Any failure: compile error, runtime error.
    AnyError,
}

impl Expectation {
    fn describe(&self) -> String {
        match self {
            Expectation::Stdout(s) => s.clone(),
            Expectation::Exception(name) => format!("raises {name}"),
            Expectation::AnyError => "an error".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    /// Canonical language key.
    pub language: String,
    pub source: String,
    /// Overrides the toolchain's file name (Java public classes).
    pub file_name: Option<String>,
    pub expectation: Expectation,
    /// Where the expectation came from, for reports.
    pub origin: String,
}

/// Explicit example calls for a function-writing answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Driver {
    pub calls: Vec<String>,
    pub expected: Vec<String>,
}

impl Driver {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, S)>) -> Self {
        let (calls, expected) = pairs.into_iter().map(|(c, e)| (c.into(), e.into())).unzip();
        Driver { calls, expected }
    }

    fn python_suffix(&self) -> String {
        self.calls.iter().map(|c| format!("print({c})\n")).collect()
    }
}

/// Trims trailing whitespace per line, folds CRLF, and drops trailing blank
/// lines. Case and leading whitespace are significant.
pub fn normalize_output(text: &str) -> String {
    let folded = text.replace("\r\n", "\n");
    let lines: Vec<&str> = folded.lines().map(str::trim_end).collect();
    let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    lines[..end].join("\n")
}

static OUTPUT_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[ \t]*(?:[-*•][ \t]*)?(?:\*\*|__)?(?:expected[ \t]+)?output(?:\*\*|__)?[ \t]*:[ \t]*(?:\*\*|__)?[ \t]*(.*)$")
        .expect("output marker")
});

/// Text under an explicit `Output:` marker: the rest of the line, else a
/// fenced block that follows, else the following lines up to a blank line.
pub fn output_section(text: &str) -> Option<String> {
    let caps = OUTPUT_MARKER.captures(text)?;
    let inline = caps[1].trim().trim_matches('`').trim();
    if !inline.is_empty() {
        return Some(inline.to_string());
    }
    let rest = &text[caps.get(0)?.end()..];
    let mut lines = rest.lines().skip_while(|l| l.trim().is_empty()).peekable();
    if lines.peek()?.trim_start().starts_with("```") {
        lines.next();
        let body: Vec<&str> = lines.take_while(|l| !l.trim_start().starts_with("```")).collect();
        return Some(body.join("\n"));
    }
    let body: Vec<&str> = lines.take_while(|l| !l.trim().is_empty()).collect();
    (!body.is_empty()).then(|| body.join("\n"))
}

/// Byte offset of the first `#` outside a string literal.
fn comment_start(line: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => quote = Some(c),
                '#' => return Some(i),
                _ => {}
            },
        }
    }
    None
}

static PRINT_CALL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*print\s*\(").expect("print call"));

/// Expected stdout stated in trailing comments of print statements, e.g.
/// `print(x)  # [1, 2]` or `print(x)  # prints [1, 2]`. Every print must be
/// annotated, otherwise the output is only partly known and `None` is
/// returned. A ` - ` suffix is treated as commentary and dropped.
pub fn comment_expectation(source: &str) -> Option<String> {
    let mut expected = Vec::new();
    for line in source.lines() {
        if !PRINT_CALL.is_match(line) {
            continue;
        }
        let hash = comment_start(line)?;
        let mut value = line[hash + 1..].trim();
        if let Some(rest) = value
            .strip_prefix("prints ")
            .or_else(|| value.strip_prefix("Prints "))
            .or_else(|| value.strip_prefix("Output: "))
            .or_else(|| value.strip_prefix("output: "))
        {
            value = rest.trim();
        }
        if let Some((head, _)) = value.split_once(" - ") {
            value = head.trim_end();
        }
        if value.is_empty() {
            return None;
        }
        expected.push(value.trim_matches('`').to_string());
    }
    (!expected.is_empty()).then(|| expected.join("\n"))
}

static DEF_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*def\s+([A-Za-z_]\w*)\s*\(").expect("def"));

static DOCTEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*>>>\s*(.+?)\s*\n\s*([^\s>].*?)\s*$").expect("doctest"));

static CALL_RESULT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"`?([A-Za-z_]\w*\([^()`\n]*\))`?\s*(?:→|->|=>|==|returns|should return|outputs|gives|evaluates to)\s*`?(True|False|None|-?\d+(?:\.\d+)?|'[^'\n]*'|\x22[^\x22\n]*\x22|\[[^\]\n]*\])`?",
    )
    .expect("call result")
});

/// Example calls of functions defined in `code`, found in `prose`.
pub fn synthesize_driver(code: &str, prose: &str) -> Option<Driver> {
    let defined: Vec<&str> = DEF_NAME
        .captures_iter(code)
        .filter_map(|c| c.get(1).map(|m| m.as_str()))
        .collect();
    if defined.is_empty() {
        return None;
    }
    let calls_defined = |call: &str| defined.iter().any(|d| call.starts_with(&format!("{d}(")));
    let mut pairs: Vec<(String, String)> = Vec::new();
    for c in DOCTEST.captures_iter(prose) {
        if calls_defined(&c[1]) {
            pairs.push((c[1].to_string(), c[2].to_string()));
        }
    }
    for c in CALL_RESULT.captures_iter(prose) {
        if calls_defined(&c[1]) {
            pairs.push((c[1].to_string(), python_display(&c[2])));
        }
    }
    pairs.dedup();
    (!pairs.is_empty()).then(|| Driver::new(pairs))
}

/// What `print` shows for a literal written in prose.
fn python_display(literal: &str) -> String {
    let quoted = literal.len() >= 2
        && ((literal.starts_with('\'') && literal.ends_with('\''))
            || (literal.starts_with('"') && literal.ends_with('"')));
    if quoted {
        literal[1..literal.len() - 1].to_string()
    } else {
        literal.to_string()
    }
}

const OUTPUT_STEM_CUES: [&str; 7] = [
    "output",
    "print",
    "what will happen",
    "what happens",
    "result of",
    "displayed",
    "when executed",
];

fn is_output_prediction(stem: &str) -> bool {
    let lower = stem.to_lowercase();
    OUTPUT_STEM_CUES.iter().any(|cue| lower.contains(cue))
}

static THROWS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:throws?|raises?|thrown|raised)\b[^`\w]*(?:an?\s+)?`?([A-Za-z_][\w.]*(?:Error|Exception|Exit|Interrupt|Iteration))`?")
        .expect("throws")
});

static BARE_EXCEPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^`?([A-Z][\w.]*(?:Error|Exception))`?\.?$").expect("bare exception")
});

static ANY_ERROR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:an?\s+)?(?:compilation|compile[- ]time|runtime|run-time|syntax)?\s*error(?:\s+(?:occurs|is raised|is thrown))?\.?$")
        .expect("any error")
});

static NOTHING_PRINTED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:nothing(?:\s+is)?\s+printed|no output)\.?$").expect("nothing")
});

/// Reads the chosen MCQ option as a statement about the run.
pub fn option_expectation(text: &str) -> Expectation {
    let text = text.trim();
    if let Some(c) = THROWS.captures(text) {
        return Expectation::Exception(c[1].to_string());
    }
    if let Some(c) = BARE_EXCEPTION.captures(text) {
        return Expectation::Exception(c[1].to_string());
    }
    if ANY_ERROR.is_match(text) {
        return Expectation::AnyError;
    }
    if NOTHING_PRINTED.is_match(text) {
        return Expectation::Stdout(String::new());
    }
    let stripped = text
        .strip_prefix("Prints ")
        .or_else(|| text.strip_prefix("prints "))
        .or_else(|| text.strip_prefix("Outputs "))
        .unwrap_or(text);
    Expectation::Stdout(stripped.trim().trim_matches('`').to_string())
}

static JAVA_PUBLIC_CLASS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"public\s+(?:final\s+)?class\s+([A-Za-z_]\w*)").expect("class"));

fn file_name_for(language: &str, source: &str) -> Option<String> {
    (language == "java")
        .then(|| JAVA_PUBLIC_CLASS.captures(source).map(|c| format!("{}.java", &c[1])))
        .flatten()
}

/// Joins the blocks that share the first block's language.
fn stem_program(blocks: &[CodeBlock]) -> Option<(&'static str, String)> {
    let first = blocks.first()?;
    let language = canonical_language(&first.language_hint)?;
    let source = blocks
        .iter()
        .filter(|b| canonical_language(&b.language_hint) == Some(language))
        .map(|b| b.source.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    Some((language, source + "\n"))
}

fn language_or_unsupported(hint: &str) -> Result<&'static str, String> {
    if hint.trim().is_empty() {
        return Err("code block carries no language hint".into());
    }
    canonical_language(hint).ok_or_else(|| format!("no toolchain known for language {hint:?}"))
}

fn plan(language: &str, source: String, expectation: Expectation, origin: &str) -> ExecutionPlan {
    ExecutionPlan {
        language: language.to_string(),
        file_name: file_name_for(language, &source),
        source,
        expectation,
        origin: origin.to_string(),
    }
}

/// Decides what to run and what it should print. `Err` carries the reason
/// the question has no executable interpretation.
pub fn plan_execution(question: &Question) -> Result<ExecutionPlan, String> {
    match &question.answer {
        AnswerKey::Code {
            code,
            context,
            expected_behavior,
        } => {
            let language = language_or_unsupported(&code.language_hint)?;
            let prose = [
                question.stem.as_str(),
                context.as_deref().unwrap_or(""),
                expected_behavior.as_deref().unwrap_or(""),
                question.explanation.as_str(),
            ]
            .join("\n\n");
            let source = code.source.trim_end().to_string() + "\n";
            if let Some(out) = output_section(&prose) {
                return Ok(plan(language, source, Expectation::Stdout(out), "output section"));
            }
            if language == "python" {
                if let Some(driver) = synthesize_driver(&code.source, &prose) {
                    let expected = driver.expected.join("\n");
                    let full = source + &driver.python_suffix();
                    return Ok(plan(language, full, Expectation::Stdout(expected), "example calls"));
                }
            }
            if let Some(out) = comment_expectation(&code.source) {
                return Ok(plan(language, source, Expectation::Stdout(out), "print comments"));
            }
            Err("answer code states no checkable output and no example calls were found".into())
        }
        AnswerKey::SingleOption { label } => {
            let (language, source) = match question.code_blocks.first() {
                None => return Err("question has no code".into()),
                Some(b) => {
                    language_or_unsupported(&b.language_hint)?;
                    stem_program(&question.code_blocks).ok_or("question has no runnable code")?
                }
            };
            if !is_output_prediction(&question.stem) {
                return Err("stem does not ask for the program's behaviour".into());
            }
            let chosen = question
                .option(label)
                .ok_or_else(|| format!("answer label {label:?} is not an option"))?;
            if let Some(out) = output_section(&question.explanation) {
                return Ok(plan(language, source, Expectation::Stdout(out), "output section"));
            }
            Ok(plan(language, source, option_expectation(&chosen.text), "chosen option"))
        }
        AnswerKey::MultiOption { .. } => Err("multi-answer questions have no single expected run".into()),
        AnswerKey::Text { text } => {
            let Some(first) = question.code_blocks.first() else {
                return Err("prose answer".into());
            };
            language_or_unsupported(&first.language_hint)?;
            let (language, source) = stem_program(&question.code_blocks).ok_or("no runnable code")?;
            if !is_output_prediction(&question.stem) {
                return Err("prose answer to a code question".into());
            }
            let expected = output_section(text)
                .or_else(|| output_section(&question.explanation))
                .unwrap_or_else(|| text.trim().trim_matches('`').to_string());
            Ok(plan(language, source, Expectation::Stdout(expected), "answer text"))
        }
    }
}

/// Runs a plan and compares the result with its expectation.
pub fn execute_plan(plan: &ExecutionPlan, sandbox: &SandboxConfig) -> ExecutionVerdict {
    let expected = plan.expectation.describe();
    let Some(toolchain) = sandbox.toolchains.get(&plan.language) else {
        return ExecutionVerdict {
            expected,
            ..ExecutionVerdict::unsupported(format!("no {} toolchain configured", plan.language))
        };
    };
    let run = match run_source(sandbox, toolchain, plan.file_name.as_deref(), &plan.source) {
        Ok(run) => run,
        Err(e) => {
            return ExecutionVerdict {
                outcome: Outcome::ExecutionError,
                observed_stdout: String::new(),
                expected,
                detail: e.to_string(),
            }
        }
    };
    let verdict = |outcome: Outcome, detail: String| ExecutionVerdict {
        outcome,
        observed_stdout: run.stdout.clone(),
        expected: expected.clone(),
        detail,
    };
    if run.timed_out {
        return verdict(Outcome::Timeout, format!("killed after {:?}", sandbox.wall_timeout));
    }
    let failed = run.exit_code != Some(0);
    let stderr_tail = tail(&run.stderr, 400);
    match &plan.expectation {
        Expectation::Stdout(want) => {
            if failed {
                verdict(Outcome::ExecutionError, format!("exit {:?}: {stderr_tail}", run.exit_code))
            } else if normalize_output(&run.stdout) == normalize_output(want) {
                verdict(Outcome::Verified, format!("stdout matches ({})", plan.origin))
            } else {
                verdict(Outcome::Mismatch, format!("stdout differs from {}", plan.origin))
            }
        }
        Expectation::Exception(name) => {
            if !failed {
                verdict(Outcome::Mismatch, format!("exited cleanly; expected {name}"))
            } else if run.stderr.contains(name.as_str()) {
                verdict(Outcome::Verified, format!("{name} raised as stated"))
            } else {
                verdict(Outcome::ExecutionError, format!("failed without {name}: {stderr_tail}"))
            }
        }
        Expectation::AnyError => {
            if failed {
                verdict(Outcome::Verified, format!("failed as stated: {stderr_tail}"))
            } else {
                verdict(Outcome::Mismatch, "ran cleanly; an error was expected".into())
            }
        }
    }
}

fn tail(text: &str, max: usize) -> String {
    let t = text.trim_end();
    match t.char_indices().rev().nth(max) {
        Some((i, _)) => t[i..].to_string(),
        None => t.to_string(),
    }
}

pub fn verify_by_execution(question: &Question, sandbox: &SandboxConfig) -> ExecutionVerdict {
    match plan_execution(question) {
        Ok(plan) => execute_plan(&plan, sandbox),
        Err(reason) => ExecutionVerdict::unsupported(reason),
    }
}

/// Runs a function-writing answer against caller-supplied example calls.
pub fn verify_with_driver(
    question: &Question,
    driver: &Driver,
    sandbox: &SandboxConfig,
) -> ExecutionVerdict {
    let AnswerKey::Code { code, .. } = &question.answer else {
        return ExecutionVerdict::unsupported("answer is not code");
    };
    if canonical_language(&code.language_hint) != Some("python") {
        return ExecutionVerdict::unsupported("drivers are written in Python");
    }
    let source = code.source.trim_end().to_string() + "\n" + &driver.python_suffix();
    let p = plan(
        "python",
        source,
        Expectation::Stdout(driver.expected.join("\n")),
        "supplied driver",
    );
    execute_plan(&p, sandbox)
}

/// Verifies every question, at most `parallelism` subprocesses at a time.
/// Results keep the input order.
pub fn verify_all(
    questions: &[Question],
    sandbox: &SandboxConfig,
    parallelism: usize,
) -> Vec<(QuestionId, ExecutionVerdict)> {
    let workers = parallelism.max(1).min(questions.len().max(1));
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<ExecutionVerdict>> = vec![None; questions.len()];
    let done: Vec<Vec<(usize, ExecutionVerdict)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(q) = questions.get(i) else { break };
                        out.push((i, verify_by_execution(q, sandbox)));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("verifier thread")).collect()
    });
    for (i, v) in done.into_iter().flatten() {
        slots[i] = Some(v);
    }
    questions
        .iter()
        .zip(slots)
        .map(|(q, v)| (q.id.clone(), v.expect("every index visited")))
        .collect()
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyntaxVerdict {
    WellFormed,
    SyntaxError(String),
    Unsupported,
}

/// Parse-only check with the language's configured command.
pub fn syntax_check(
    block: &CodeBlock,
    language: &str,
    sandbox: &SandboxConfig,
) -> Result<SyntaxVerdict, SandboxError> {
    let Some(canonical) = canonical_language(language) else {
        return Ok(SyntaxVerdict::Unsupported);
    };
    let Some(toolchain) = sandbox.toolchains.get(canonical) else {
        return Ok(SyntaxVerdict::Unsupported);
    };
    let Some(command) = &toolchain.syntax_check else {
        return Ok(SyntaxVerdict::Unsupported);
    };
    let file = file_name_for(canonical, &block.source).unwrap_or_else(|| toolchain.file_name.clone());
    let run = run_in_sandbox(sandbox, command, &file, &block.source)?;
    if run.timed_out {
        return Err(SandboxError::Timeout(sandbox.wall_timeout));
    }
    Ok(if run.success() {
        SyntaxVerdict::WellFormed
    } else {
        SyntaxVerdict::SyntaxError(tail(&run.stderr, 400))
    })
}
