//! Canonical markdown rendering of questions, readable by [`crate::parser`].

use std::fmt::Write as _;

use crate::taxonomy::{letter_label, AnswerKey, CodeBlock, Question};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderStyle {
    /// Rewrite number-style option labels as letters.
    pub letter_labels: bool,
    pub include_answer: bool,
    /// Number shown in the heading; defaults to the question's ordinal.
    pub number: Option<u32>,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            letter_labels: false,
            include_answer: true,
            number: None,
        }
    }
}

fn label(raw: &str, letters: bool) -> String {
    if letters {
        letter_label(raw)
    } else {
        raw.to_string()
    }
}

fn option_line(label: &str, text: &str) -> String {
    if label.chars().all(|c| c.is_ascii_digit()) {
        format!("{label}. {text}")
    } else {
        format!("{label}) {text}")
    }
}

pub fn render_code_block(out: &mut String, block: &CodeBlock) {
    out.push_str("```");
    out.push_str(&block.language_hint);
    out.push('\n');
    out.push_str(&block.source);
    if !block.source.is_empty() && !block.source.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
}

/// Heading line, e.g. `**Question 3 (2/5)**`.
pub fn heading(number: u32, question: &Question) -> String {
    match question.difficulty {
        Some(d) => format!("**Question {number} ({d})**"),
        None => format!("**Question {number}**"),
    }
}

/// The `Answer:` paragraph for `question`.
pub fn render_answer(question: &Question, letters: bool) -> String {
    let mut out = String::new();
    match &question.answer {
        AnswerKey::SingleOption { label: l } => {
            let shown = label(l, letters);
            match question.option(l) {
                Some(opt) => {
                    let _ = writeln!(out, "Answer: {}", option_line(&shown, &opt.text));
                }
                None if shown.chars().all(|c| c.is_ascii_digit()) => {
                    let _ = writeln!(out, "Answer: {shown}.");
                }
                None => {
                    let _ = writeln!(out, "Answer: {shown})");
                }
            }
        }
        AnswerKey::MultiOption { labels } => {
            let shown: Vec<String> = labels.iter().map(|l| label(l, letters)).collect();
            let _ = writeln!(out, "Answer: {}", shown.join(", "));
        }
        AnswerKey::Text { text } => {
            let _ = write!(out, "Answer:\n\n{text}\n");
        }
        AnswerKey::Code {
            code,
            context,
            expected_behavior,
        } => {
            out.push_str("Answer:\n\n");
            if let Some(c) = context {
                let _ = write!(out, "{c}\n\n");
            }
            render_code_block(&mut out, code);
            if let Some(e) = expected_behavior {
                let _ = write!(out, "\n{e}\n");
            }
        }
    }
    out
}

pub fn render_explanation(question: &Question) -> Option<String> {
    (!question.explanation.is_empty())
        .then(|| format!("Explanation:\n\n{}\n", question.explanation))
}

/// Renders one question as a markdown block ending in a newline.
pub fn render_question(question: &Question, style: RenderStyle) -> String {
    let number = style.number.unwrap_or(question.ordinal);
    let mut out = heading(number, question);
    out.push_str("\n\n");
    if !question.stem.is_empty() {
        out.push_str(&question.stem);
        out.push_str("\n\n");
    }
    for block in &question.code_blocks {
        render_code_block(&mut out, block);
        out.push('\n');
    }
    if !question.options.is_empty() {
        for opt in &question.options {
            out.push_str(&option_line(&label(&opt.label, style.letter_labels), &opt.text));
            out.push('\n');
        }
        out.push('\n');
    }
    if style.include_answer {
        out.push_str(&render_answer(question, style.letter_labels));
        if let Some(expl) = render_explanation(question) {
            out.push('\n');
            out.push_str(&expl);
        }
    }
    out
}

/// Concatenates rendered questions separated by blank lines.
pub fn render_questions(questions: &[Question], style: RenderStyle) -> String {
    questions
        .iter()
        .map(|q| render_question(q, style))
        .collect::<Vec<_>>()
        .join("\n")
}
