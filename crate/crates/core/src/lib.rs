//! Core of the exam generation toolchain.
//!
//! The pipeline runs spec → prompt → model response → parsed questions →
//! validation → bank, with survey statistics alongside.

pub mod bank;
pub mod gateway;
pub mod job;
pub mod markdown;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod survey;
pub mod taxonomy;
pub mod validator;

pub use parser::{parse_exam, Diagnostic, ParseResult, Severity};
pub use prompt::{render_prompt, PromptText};
pub use taxonomy::*;
