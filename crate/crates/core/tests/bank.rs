use std::io::Write;
use std::path::PathBuf;

use examgen_core::bank::{export, Bank, BankError, ExamDocument, ExamFilter, ExportFormat, EXAM_DOCUMENT_SCHEMA};
use examgen_core::job::JobRecord;
use examgen_core::parser::parse_exam_as;
use examgen_core::taxonomy::{CurationStatus, Difficulty, ExamSpec, JobId, Question, QuestionKind};

fn read(rel: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)).unwrap()
}

fn twenty() -> Vec<Question> {
    parse_exam_as(&read("fixtures/responses/python-mcq-20.md"), QuestionKind::MultipleChoice).questions
}

fn schema_check(bytes: &[u8]) {
    let schema: serde_json::Value = serde_json::from_str(EXAM_DOCUMENT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
}

#[test]
fn put_is_idempotent_and_ids_are_owned_by_one_job() {
    let bank = Bank::in_memory();
    let job = JobId::random();
    let qs = twenty();
    bank.put_questions(&job, &qs).unwrap();
    assert_eq!(bank.list(None).len(), 20);
    bank.put_questions(&job, &qs).unwrap();
    assert_eq!(bank.list(Some(&job)).len(), 20);
    let err = bank.put_questions(&JobId::random(), &qs[..1]).unwrap_err();
    assert!(matches!(err, BankError::DuplicateId { .. }));
    let twice = vec![qs[0].clone(), qs[0].clone()];
    assert!(matches!(bank.put_questions(&job, &twice), Err(BankError::DuplicateInBatch(_))));
}

#[test]
fn writes_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let job_spec = ExamSpec::from_json(&read("specs/python-mcq-20.json")).unwrap();
    let job = JobRecord::new(job_spec, "fixture-default");
    let qs = twenty();
    {
        let bank = Bank::open(&path).unwrap();
        bank.put_job(&job).unwrap();
        bank.put_questions(&job.id, &qs).unwrap();
        bank.set_status(&qs[0].id, CurationStatus::Accepted).unwrap();
        bank.set_status(&qs[1].id, CurationStatus::Rejected).unwrap();
    }
    let bank = Bank::open(&path).unwrap();
    assert_eq!(bank.len(), 20);
    assert_eq!(bank.get(&qs[0].id).unwrap().question.status, CurationStatus::Accepted);
    assert_eq!(bank.get(&qs[1].id).unwrap().question.status, CurationStatus::Rejected);
    assert_eq!(bank.get_job(&job.id).unwrap(), job);
    let order: Vec<_> = bank.list(None).into_iter().map(|r| r.question.id).collect();
    assert_eq!(order, qs.iter().map(|q| q.id.clone()).collect::<Vec<_>>());
}

#[test]
fn torn_tail_is_skipped_and_later_writes_parse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let qs = twenty();
    let job = JobId::random();
    Bank::open(&path).unwrap().put_questions(&job, &qs[..2]).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"event\":\"record\",\"question\":{\"id")
        .unwrap();
    let bank = Bank::open(&path).unwrap();
    assert_eq!(bank.len(), 2);
    bank.put_questions(&job, &qs[2..3]).unwrap();
    drop(bank);
    assert_eq!(Bank::open(&path).unwrap().len(), 3);
}

#[test]
fn corruption_before_the_tail_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let qs = twenty();
    Bank::open(&path).unwrap().put_questions(&JobId::random(), &qs[..2]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("garbage\n{text}")).unwrap();
    assert!(matches!(Bank::open(&path), Err(BankError::Corrupt { line: 1, .. })));
}

#[test]
fn assemble_by_difficulty_range() {
    let bank = Bank::in_memory();
    let spec = ExamSpec::from_json(&read("specs/python-mcq-20.json")).unwrap();
    let job = JobRecord::new(spec, "fixture-default");
    bank.put_job(&job).unwrap();
    let qs = twenty();
    bank.put_questions(&job.id, &qs).unwrap();
    for q in &qs {
        bank.set_status(&q.id, CurationStatus::Accepted).unwrap();
    }
    let filter = ExamFilter {
        min_difficulty: Difficulty::new(4),
        max_difficulty: Difficulty::new(5),
        ..Default::default()
    };
    let doc = bank.assemble(&filter);
    assert_eq!(doc.questions.len(), 9);
    assert!(doc.questions.windows(2).all(|w| (w[0].difficulty, w[0].ordinal) < (w[1].difficulty, w[1].ordinal)));
    assert_eq!(bank.assemble(&filter), doc);

    let python = ExamFilter { target_language: Some("python".into()), ..Default::default() };
    assert_eq!(bank.assemble(&python).questions.len(), 20);
    let java = ExamFilter { target_language: Some("Java".into()), ..Default::default() };
    assert!(bank.assemble(&java).questions.is_empty());
    let essays = ExamFilter { kinds: vec![QuestionKind::Essay], ..Default::default() };
    assert!(bank.assemble(&essays).questions.is_empty());
}

#[test]
fn empty_bank_exports_an_empty_valid_document() {
    let doc = Bank::in_memory().assemble(&ExamFilter::default());
    assert!(doc.questions.is_empty());
    let json = export(&doc, ExportFormat::Json);
    schema_check(&json);
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["questions"], serde_json::json!([]));
}

#[test]
fn json_export_is_schema_valid_and_stable() {
    let mut qs = twenty();
    qs.extend(parse_exam_as(&read("fixtures/responses/essay-copy.md"), QuestionKind::Essay).questions);
    qs.extend(
        parse_exam_as(&read("fixtures/responses/short-answer-check-even.md"), QuestionKind::ShortAnswer).questions,
    );
    let doc = ExamDocument {
        title: "Python".into(),
        spec_summary: "mixed".into(),
        questions: qs,
        answer_key_separate: false,
    };
    let a = export(&doc, ExportFormat::Json);
    schema_check(&a);
    assert_eq!(a, export(&doc.clone(), ExportFormat::Json));
    let text = String::from_utf8(a).unwrap();
    let keys = ["\"schema_version\"", "\"title\"", "\"spec_summary\"", "\"answer_key_separate\"", "\"questions\""];
    let positions: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn separate_answer_key_for_file_io_question() {
    let qs = parse_exam_as(&read("fixtures/responses/mcq-file-io.md"), QuestionKind::MultipleChoice).questions;
    let doc = ExamDocument {
        title: "Quiz".into(),
        spec_summary: String::new(),
        questions: qs,
        answer_key_separate: true,
    };
    let md = String::from_utf8(export(&doc, ExportFormat::Markdown)).unwrap();
    let key = md.find("## Answer Key").unwrap();
    assert!(!md[..key].contains("Answer:"));
    assert!(md[..key].contains("c) Overwrites `data.txt` with \"Hello, World!\""));
    assert!(md[key..].contains("Answer: c)"));
    assert!(md[key..].contains("The `w` mode overwrites the file."));
}

#[test]
fn markdown_export_round_trips_the_fixture_corpus() {
    let corpus = [
        ("python-mcq-20.md", QuestionKind::MultipleChoice),
        ("mcq-file-io.md", QuestionKind::MultipleChoice),
        ("mcq-cpp-ternary.md", QuestionKind::MultipleChoice),
        ("mcq-java-bounds.md", QuestionKind::MultipleChoice),
        ("short-answer-check-even.md", QuestionKind::ShortAnswer),
        ("essay-copy.md", QuestionKind::Essay),
    ];
    for (file, kind) in corpus {
        let original = parse_exam_as(&read(&format!("fixtures/responses/{file}")), kind).questions;
        let doc = ExamDocument {
            title: "Round trip".into(),
            spec_summary: format!("{} questions", original.len()),
            questions: original.clone(),
            answer_key_separate: false,
        };
        let md = String::from_utf8(export(&doc, ExportFormat::Markdown)).unwrap();
        let back = parse_exam_as(&md, kind);
        assert_eq!(back.errors().count(), 0, "{file}: {:?}", back.diagnostics);
        assert_eq!(back.questions.len(), original.len(), "{file}");
        for (a, b) in original.iter().zip(&back.questions) {
            let want = a.with_letter_labels();
            assert!(want.content_eq(b), "{file}\nwant {want:#?}\ngot {b:#?}");
        }
    }
}

#[test]
fn missing_final_newline_is_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bank.jsonl");
    let qs = twenty();
    let job = JobId::random();
    Bank::open(&path).unwrap().put_questions(&job, &qs[..1]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.trim_end()).unwrap();
    Bank::open(&path).unwrap().put_questions(&job, &qs[1..2]).unwrap();
    assert_eq!(Bank::open(&path).unwrap().len(), 2);
}
