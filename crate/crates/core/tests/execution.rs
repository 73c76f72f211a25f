use std::path::PathBuf;
use std::time::{Duration, Instant};

use examgen_core::parser::parse_exam_as;
use examgen_core::taxonomy::{AnswerKey, CodeBlock, Question, QuestionKind};
use examgen_core::validator::sandbox::{cpp_toolchain, network_namespace_available, python_toolchain, run_source};
use examgen_core::validator::{
    syntax_check, verify_all, verify_by_execution, verify_with_driver, Driver, Outcome, SandboxConfig,
    SyntaxVerdict,
};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/responses").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn only(name: &str, kind: QuestionKind) -> Question {
    let parsed = parse_exam_as(&fixture(name), kind);
    assert_eq!(parsed.errors().count(), 0, "{:?}", parsed.diagnostics);
    assert_eq!(parsed.questions.len(), 1);
    parsed.questions.into_iter().next().unwrap()
}

fn python_only() -> SandboxConfig {
    SandboxConfig::empty().with_toolchain("python", python_toolchain())
}

#[test]
fn check_even_with_driver_is_verified() {
    let q = only("short-answer-check-even.md", QuestionKind::ShortAnswer);
    let driver = Driver::new([("check_even(4)", "True"), ("check_even(7)", "False")]);
    let v = verify_with_driver(&q, &driver, &python_only());
    assert_eq!(v.outcome, Outcome::Verified, "{v:?}");
    assert_eq!(v.observed_stdout, "True\nFalse\n");
}

#[test]
fn check_even_without_examples_is_unsupported() {
    let q = only("short-answer-check-even.md", QuestionKind::ShortAnswer);
    let v = verify_by_execution(&q, &python_only());
    assert_eq!(v.outcome, Outcome::Unsupported, "{v:?}");
}

#[test]
fn wrong_driver_expectation_is_a_mismatch() {
    let q = only("short-answer-check-even.md", QuestionKind::ShortAnswer);
    let driver = Driver::new([("check_even(4)", "true")]);
    assert_eq!(verify_with_driver(&q, &driver, &python_only()).outcome, Outcome::Mismatch);
}

#[test]
fn copy_snippet_prints_the_commented_lists() {
    let q = only("essay-copy.md", QuestionKind::Essay);
    let v = verify_by_execution(&q, &python_only());
    assert_eq!(v.outcome, Outcome::Verified, "{v:?}");
    assert_eq!(v.observed_stdout, "[[99, 2], [3, 4]]\n[[99, 2], [3, 4]]\n");
}

#[test]
fn file_write_does_not_leak_between_runs() {
    let q = only("mcq-file-io.md", QuestionKind::MultipleChoice);
    let snippet = &q.code_blocks[0].source;
    let probe = format!(
        "import os\nprint('present' if os.path.exists('data.txt') else 'absent')\n{snippet}\nprint(open('data.txt').read())\n"
    );
    let cfg = python_only();
    let tc = cfg.toolchain("python").unwrap().clone();
    for _ in 0..2 {
        let out = run_source(&cfg, &tc, None, &probe).unwrap();
        assert_eq!(out.stdout, "absent\nHello, World!\n", "{out:?}");
    }
    // "What does the following code do?" has no output to compare.
    assert_eq!(verify_by_execution(&q, &cfg).outcome, Outcome::Unsupported);
}

#[test]
fn cpp_ternary_when_compiler_present() {
    let q = only("mcq-cpp-ternary.md", QuestionKind::MultipleChoice);
    let detected = SandboxConfig::detect();
    let v = verify_by_execution(&q, &detected);
    if detected.toolchains.contains_key("cpp") {
        assert_eq!(v.outcome, Outcome::Verified, "{v:?}");
    } else {
        assert_eq!(v.outcome, Outcome::Unsupported);
    }
    assert_eq!(verify_by_execution(&q, &python_only()).outcome, Outcome::Unsupported);
}

#[test]
fn java_bounds_depends_on_toolchain() {
    let q = only("mcq-java-bounds.md", QuestionKind::MultipleChoice);
    let detected = SandboxConfig::detect();
    let v = verify_by_execution(&q, &detected);
    assert_eq!(v.expected, "raises ArrayIndexOutOfBoundsException");
    if detected.toolchains.contains_key("java") {
        assert_eq!(v.outcome, Outcome::Verified, "{v:?}");
    } else {
        assert_eq!(v.outcome, Outcome::Unsupported, "{v:?}");
    }
}

#[test]
fn expected_exception_flips_failure_to_verified() {
    let q = Question {
        code_blocks: vec![CodeBlock::new("python", "print([1, 2, 3][3])")],
        ..only("mcq-java-bounds.md", QuestionKind::MultipleChoice)
    };
    let mut q = q;
    q.options[2].text = "Throws an `IndexError`".into();
    assert_eq!(verify_by_execution(&q, &python_only()).outcome, Outcome::Verified);
    q.options[2].text = "Throws a `KeyError`".into();
    assert_eq!(verify_by_execution(&q, &python_only()).outcome, Outcome::ExecutionError);
    q.code_blocks[0].source = "print(1)".into();
    assert_eq!(verify_by_execution(&q, &python_only()).outcome, Outcome::Mismatch);
}

#[test]
fn twenty_question_exam_verifies_every_output_item() {
    let parsed = parse_exam_as(&fixture("python-mcq-20.md"), QuestionKind::MultipleChoice);
    assert_eq!(parsed.questions.len(), 20);
    let verdicts = verify_all(&parsed.questions, &python_only(), 4);
    assert_eq!(verdicts.len(), 20);
    for ((id, v), q) in verdicts.iter().zip(&parsed.questions) {
        assert_eq!(id, &q.id);
        assert!(
            matches!(v.outcome, Outcome::Verified | Outcome::Unsupported),
            "question {}: {v:?}",
            q.ordinal
        );
    }
    let verified = verdicts.iter().filter(|(_, v)| v.outcome == Outcome::Verified).count();
    assert!(verified >= 8, "only {verified} verified");
}

#[test]
fn syntax_tier() {
    let cfg = python_only();
    let file_io = CodeBlock::new(
        "python",
        "with open(\"data.txt\", \"w\") as file:\n    file.write(\"Hello, World!\")\n",
    );
    assert_eq!(syntax_check(&file_io, "python", &cfg).unwrap(), SyntaxVerdict::WellFormed);
    let bad = CodeBlock::new("python", "def f(:\n    pass\n");
    assert!(matches!(syntax_check(&bad, "python", &cfg).unwrap(), SyntaxVerdict::SyntaxError(_)));
    assert_eq!(syntax_check(&bad, "cobol", &cfg).unwrap(), SyntaxVerdict::Unsupported);
    if detect_has("cpp") {
        let cfg = cfg.with_toolchain("cpp", cpp_toolchain());
        let ok = CodeBlock::new("cpp", "int main() { return 0; }\n");
        assert_eq!(syntax_check(&ok, "c++", &cfg).unwrap(), SyntaxVerdict::WellFormed);
    }
}

fn detect_has(lang: &str) -> bool {
    SandboxConfig::detect().toolchains.contains_key(lang)
}

#[test]
fn runaway_code_times_out() {
    let q = Question {
        answer: AnswerKey::Text { text: "1".into() },
        code_blocks: vec![CodeBlock::new("python", "while True:\n    pass\n")],
        stem: "What is the output of the following code?".into(),
        ..only("essay-copy.md", QuestionKind::Essay)
    };
    let cfg = python_only().with_timeout(Duration::from_millis(400));
    let start = Instant::now();
    assert_eq!(verify_by_execution(&q, &cfg).outcome, Outcome::Timeout);
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn sandbox_reports_isolation_state() {
    let cfg = python_only();
    let tc = cfg.toolchain("python").unwrap().clone();
    let out = run_source(&cfg, &tc, None, "print(1)").unwrap();
    assert_eq!(out.network_isolated, network_namespace_available());
}
