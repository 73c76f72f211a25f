//! Generators and brute-force oracles shared by the property suites and the
//! acceptance runner.
#![allow(dead_code)]

use proptest::prelude::*;

use examgen_core::survey::{ExperienceGroup, LikertResponse};
use examgen_core::taxonomy::{
    AnswerKey, CodeBlock, CurationStatus, Difficulty, OptionItem, Provenance, Question, QuestionId, QuestionKind,
};

pub const WORDS: &[&str] = &[
    "list", "value", "loop", "returns", "the", "function", "variable", "dictionary", "tuple", "class",
    "method", "string", "index", "error", "file", "set", "integer", "which", "of", "following",
];

pub fn sentence(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), min..=max).prop_map(|w| {
        let mut s = w.join(" ");
        s[..1].make_ascii_uppercase();
        s
    })
}

pub fn code() -> impl Strategy<Value = CodeBlock> {
    prop::collection::vec((prop::sample::select(&["x", "total", "items", "n"][..]), 0u32..100), 1..5)
        .prop_map(|lines| {
            let src: String = lines.iter().map(|(v, k)| format!("{v} = {k}\n")).collect();
            CodeBlock::new("python", src + "print(x)\n")
        })
}

pub fn question() -> impl Strategy<Value = Question> {
    let kind = prop::sample::select(&QuestionKind::ALL[..]);
    (
        kind,
        1u32..60,
        prop::option::of(1u8..=5),
        sentence(3, 10),
        prop::collection::vec(code(), 0..2),
        sentence(3, 12),
        any::<bool>(),
    )
        .prop_flat_map(|(kind, ordinal, level, stem, code_blocks, explanation, numbered)| {
            let answer_and_options: BoxedStrategy<(Vec<OptionItem>, AnswerKey)> = match kind {
                QuestionKind::MultipleChoice => prop::collection::vec(sentence(1, 5), 2..6)
                    .prop_flat_map(move |texts| {
                        let n = texts.len();
                        let label = move |i: usize| {
                            if numbered {
                                (i + 1).to_string()
                            } else {
                                char::from(b'a' + i as u8).to_string()
                            }
                        };
                        let options: Vec<OptionItem> =
                            texts.iter().enumerate().map(|(i, t)| OptionItem::new(label(i), t.clone())).collect();
                        (Just(options), prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=2.min(n)))
                            .prop_map(move |(options, picked)| {
                                let answer = if picked.len() == 1 {
                                    AnswerKey::SingleOption { label: label(picked[0]) }
                                } else {
                                    AnswerKey::MultiOption { labels: picked.iter().map(|&i| label(i)).collect() }
                                };
                                (options, answer)
                            })
                    })
                    .boxed(),
                QuestionKind::ShortAnswer => prop_oneof![
                    sentence(2, 8).prop_map(|t| (Vec::new(), AnswerKey::Text { text: t })),
                    (code(), prop::option::of(sentence(2, 6)), prop::option::of(sentence(2, 6))).prop_map(
                        |(code, context, expected_behavior)| {
                            (Vec::new(), AnswerKey::Code { code, context, expected_behavior })
                        }
                    ),
                ]
                .boxed(),
                QuestionKind::Essay => sentence(4, 16).prop_map(|t| (Vec::new(), AnswerKey::Text { text: t })).boxed(),
            };
            answer_and_options.prop_map(move |(options, answer)| Question {
                id: QuestionId::random(),
                ordinal,
                kind,
                qtype: None,
                difficulty: level.and_then(Difficulty::new),
                stem: stem.clone() + "?",
                code_blocks: code_blocks.clone(),
                options,
                answer,
                explanation: explanation.clone() + ".",
                status: CurationStatus::Draft,
                provenance: Provenance::unattributed(),
            })
        })
}

pub fn small_exam() -> impl Strategy<Value = ([u32; 5], Vec<Option<u8>>)> {
    (prop::array::uniform5(0u32..4), prop::collection::vec(prop::option::weighted(0.95, 1u8..=5), 0..14))
}

/// Independent oracle: compare per-level counts by brute force.
pub fn multiset_differs(spec: [u32; 5], levels: &[Option<u8>]) -> bool {
    (1..=5u8).any(|lvl| levels.iter().filter(|l| **l == Some(lvl)).count() as u32 != spec[(lvl - 1) as usize])
}

pub fn mcq(level: Option<u8>, ordinal: u32) -> Question {
    Question {
        id: QuestionId::random(),
        ordinal,
        kind: QuestionKind::MultipleChoice,
        qtype: None,
        difficulty: level.and_then(Difficulty::new),
        stem: format!("Stem {ordinal}"),
        code_blocks: Vec::new(),
        options: vec![OptionItem::new("a", "x"), OptionItem::new("b", "y")],
        answer: AnswerKey::SingleOption { label: "a".into() },
        explanation: "e".into(),
        status: CurationStatus::Draft,
        provenance: Provenance::unattributed(),
    }
}

pub const GROUPS: [ExperienceGroup; 4] = [
    ExperienceGroup::Under1,
    ExperienceGroup::OneToTwo,
    ExperienceGroup::TwoToThree,
    ExperienceGroup::ThreePlus,
];

pub fn responses() -> impl Strategy<Value = Vec<LikertResponse>> {
    prop::collection::vec((0usize..4, prop::array::uniform14(1u8..=5)), 1..=50).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (g, a))| LikertResponse::new(format!("p{i}"), GROUPS[g], &a, i + 1).unwrap())
            .collect()
    })
}

/// Two-pass mean and SD.
pub fn oracle(xs: &[f64], sample: bool) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let denom = if sample { n - 1.0 } else { n };
    (mean, if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 })
}
