use std::time::Duration;

use proptest::prelude::*;

use examgen_core::gateway::backoff_delay;
use examgen_core::markdown::{render_question, RenderStyle};
use examgen_core::parser::parse_exam_as;
use examgen_core::prompt::render_prompt;
use examgen_core::survey::{compute_stats, ExperienceGroup, LikertResponse, SdDivisor, ITEMS};
use examgen_core::taxonomy::{validate_spec, DifficultyDistribution, ExamSpec, Question, QuestionKind};
use examgen_core::validator::{validate, Finding, FindingCode, ValidationReport};

mod support;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rendered_questions_parse_back(q in question()) {
        let md = render_question(&q, RenderStyle { letter_labels: true, ..Default::default() });
        let parsed = parse_exam_as(&md, q.kind);
        prop_assert_eq!(parsed.errors().count(), 0, "{}\n{:?}", md, parsed.diagnostics);
        prop_assert_eq!(parsed.questions.len(), 1);
        let want = q.with_letter_labels();
        prop_assert!(want.content_eq(&parsed.questions[0]), "{}\nwant {:#?}\ngot {:#?}", md, want, parsed.questions[0]);
    }

    #[test]
    fn parser_is_total(text in "\\PC{0,400}", kind in prop::sample::select(&QuestionKind::ALL[..])) {
        let r = parse_exam_as(&text, kind);
        for d in &r.diagnostics {
            prop_assert!(d.span.start <= d.span.end && d.span.end <= text.len());
        }
    }

    #[test]
    fn parser_is_total_on_markdownish_input(
        lines in prop::collection::vec(prop::sample::select(&[
            "**Question 1 (2/5)**", "Q3.", "1. **Question:**", "Level 2/5", "Difficulty: 4/5",
            "a) one", "b) two", "1. first", "Answer:", "Answer: b)", "Explanation:", "```python",
            "```", "print(1)", "", "text", "• **Answer:** 2. x", "Question 7:",
        ][..]), 0..40),
        kind in prop::sample::select(&QuestionKind::ALL[..]),
    ) {
        let text = lines.join("\n");
        let r = parse_exam_as(&text, kind);
        for q in &r.questions {
            let span = q.provenance.raw_span.clone().unwrap();
            prop_assert!(span.end <= text.len());
        }
    }

    #[test]
    fn backoff_grows(base_ms in 1u64..2000, jitter in 0.0f64..0.5, k in 0u32..12) {
        let base = Duration::from_millis(base_ms);
        let d = backoff_delay(base, k, jitter);
        let floor = base.mul_f64(2f64.powi(k as i32));
        prop_assert!(d >= floor && d < floor.mul_f64(1.5));
        prop_assert!(backoff_delay(base, k + 1, jitter) >= d);
    }

    #[test]
    fn prompt_counts_sum_to_total(counts in prop::array::uniform5(0u32..12)) {
        prop_assume!(counts.iter().sum::<u32>() > 0);
        let spec = ExamSpec::new(
            QuestionKind::MultipleChoice, "Python", vec!["loops".into()], DifficultyDistribution::new(counts),
        );
        let text = render_prompt(&spec).unwrap().text;
        let mut listed = [0u32; 5];
        for line in text.lines() {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix("- ") {
                if let Some((lvl, n)) = rest.split_once("/5: [") {
                    let lvl: usize = lvl.parse().unwrap();
                    listed[lvl - 1] = n.split(' ').next().unwrap().parse().unwrap();
                }
            }
        }
        prop_assert_eq!(listed, counts);
        let total_line = format!("[{} question", spec.total);
        prop_assert!(text.contains(&total_line));
    }

    #[test]
    fn spec_counts_are_tight(counts in prop::array::uniform5(0u32..6), level in 0usize..5, up in any::<bool>()) {
        prop_assume!(counts.iter().sum::<u32>() > 0);
        let spec = ExamSpec::new(
            QuestionKind::Essay, "Python", vec!["io".into()], DifficultyDistribution::new(counts),
        );
        prop_assert!(validate_spec(&spec).is_ok());
        let mut bumped = spec.clone();
        let mut c = counts;
        if up { c[level] += 1 } else if c[level] > 0 { c[level] -= 1 } else { c[level] += 1 }
        bumped.distribution = DifficultyDistribution::new(c);
        let errs = validate_spec(&bumped).unwrap_err();
        prop_assert!(errs.iter().any(|e| e.code() == "DistributionMismatch"));
    }

    #[test]
    fn warnings_never_fail_errors_always_do(
        errors in 0usize..3, warnings in 0usize..3, infos in 0usize..3,
        extra in prop::sample::select(&FindingCode::ALL[..]),
    ) {
        let mut findings = Vec::new();
        findings.extend((0..errors).map(|_| Finding::new(FindingCode::CountMismatch, None, "")));
        findings.extend((0..warnings).map(|_| Finding::new(FindingCode::DuplicateStem, None, "")));
        findings.extend((0..infos).map(|_| Finding::new(FindingCode::ExecutionUnsupported, None, "")));
        let mut report = ValidationReport::new(findings, Vec::new());
        prop_assert_eq!(report.passed, errors == 0);
        let before = report.passed;
        let f = Finding::new(extra, None, "");
        let is_error = f.is_error();
        report.push(f);
        prop_assert_eq!(report.passed, before && !is_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distribution_check_agrees_with_counting_oracle((counts, levels) in small_exam()) {
        let mut spec = ExamSpec::new(
            QuestionKind::MultipleChoice, "Python", vec!["x".into()], DifficultyDistribution::new(counts),
        );
        spec.total = spec.distribution.total() as u32;
        let questions: Vec<Question> = levels.iter().enumerate().map(|(i, l)| mcq(*l, i as u32 + 1)).collect();
        let report = validate(&questions, &spec);
        prop_assert_eq!(report.has(FindingCode::DistributionMismatch), multiset_differs(counts, &levels));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn stats_match_two_pass_oracle(rows in responses(), sample in any::<bool>()) {
        let divisor = if sample { SdDivisor::Sample } else { SdDivisor::Population };
        let table = compute_stats(&rows, divisor).unwrap();
        for item in 1..=ITEMS {
            for g in ExperienceGroup::ROWS {
                let xs: Vec<f64> = rows
                    .iter()
                    .filter(|r| g == ExperienceGroup::All || r.group == g)
                    .map(|r| f64::from(r.answers[item - 1]))
                    .collect();
                match table.cell(g, item) {
                    None => prop_assert!(xs.is_empty()),
                    Some(c) => {
                        let (m, s) = oracle(&xs, sample);
                        prop_assert_eq!(c.n, xs.len());
                        prop_assert!((c.mean - m).abs() < 1e-9, "{} vs {}", c.mean, m);
                        prop_assert!((c.sd - s).abs() < 1e-9, "{} vs {}", c.sd, s);
                    }
                }
            }
            let group_n: usize = GROUPS.iter().filter_map(|g| table.cell(*g, item)).map(|c| c.n).sum();
            prop_assert_eq!(table.cell(ExperienceGroup::All, item).unwrap().n, group_n);
        }
    }

    #[test]
    fn pooling_identical_groups_keeps_the_mean(answers in prop::collection::vec(prop::array::uniform14(1u8..=5), 1..8)) {
        let rows: Vec<LikertResponse> = GROUPS
            .iter()
            .flat_map(|g| answers.iter().map(move |a| LikertResponse::new("p", *g, a, 1).unwrap()))
            .collect();
        let table = compute_stats(&rows, SdDivisor::Sample).unwrap();
        for item in 1..=ITEMS {
            let all = table.cell(ExperienceGroup::All, item).unwrap().mean;
            for g in GROUPS {
                let m = table.cell(g, item).unwrap().mean;
                prop_assert_eq!(all, m);
            }
        }
    }
}
