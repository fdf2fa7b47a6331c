//! Seeded generator for a small football / census corpus whose questions
//! exercise every operation and answer type.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_context, GoldAnswer, RawInstance, TokenizedText, Vocab};
use crate::dataset::{context_numbers, Instance};
use crate::derivations::{AnswerType, BioTag, Derivation, DerivationSet, Label};
use crate::error::Result;
use crate::rules::{Operation, OperationSet};

pub const DEFAULT_TRAIN_SIZE: usize = 200;
pub const DEFAULT_HELD_OUT_SIZE: usize = 50;

const TEAMS: [&str; 8] = ["Bears", "Lions", "Packers", "Vikings", "Eagles", "Giants", "Cowboys", "Raiders"];
const PLAYERS: [&str; 12] = [
    "Smith", "Jones", "Brown", "Miller", "Davis", "Wilson", "Moore", "Taylor", "Clark", "Hall", "Allen", "Young",
];
const CITIES: [&str; 6] = ["Springfield", "Riverside", "Fairview", "Georgetown", "Salem", "Madison"];
const QUARTERS: [&str; 4] = ["first", "second", "third", "fourth"];

/// Question kinds in round-robin order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Max,
    Min,
    Argmax,
    Argmin,
    Addition,
    Diff,
    Count,
    Argmore,
    Argless,
    Span,
    MultiSpan,
    KeyValue,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Max,
        Kind::Min,
        Kind::Argmax,
        Kind::Argmin,
        Kind::Addition,
        Kind::Diff,
        Kind::Count,
        Kind::Argmore,
        Kind::Argless,
        Kind::Span,
        Kind::MultiSpan,
        Kind::KeyValue,
    ];

    /// Operation the bundled rules assign to this kind's question.
    pub fn operation(self) -> Option<Operation> {
        Some(match self {
            Kind::Max => Operation::Max,
            Kind::Min => Operation::Min,
            Kind::Argmax => Operation::Argmax,
            Kind::Argmin => Operation::Argmin,
            Kind::Addition => Operation::Addition,
            Kind::Diff => Operation::Diff,
            Kind::Count => Operation::Count,
            Kind::Argmore => Operation::Argmore,
            Kind::Argless => Operation::Argless,
            Kind::Span => Operation::Span,
            Kind::MultiSpan => return None,
            Kind::KeyValue => Operation::KeyValue,
        })
    }
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    pool.choose_multiple(rng, n).copied().collect()
}

fn quarter_sentence(team: &str, quarters: &[&str]) -> String {
    match quarters {
        [q] => format!("{team} kicked a single field goal in the {q} quarter."),
        [a, b] => format!("{team} kicked field goals in the {a} and {b} quarters."),
        [a, b, c] => format!("{team} kicked field goals in the {a}, {b} and {c} quarters."),
        _ => format!("{team} kicked field goals in every quarter."),
    }
}

/// Distinct two-digit yardages `long > short` and an unrelated touchdown length.
/// Resampled until every question's answer has exactly one signed-sum
/// derivation over the three and no signed sum lands in 0..=9.
fn yardages<R: Rng>(rng: &mut R) -> (i64, i64, i64) {
    loop {
        let long = rng.gen_range(35..=59);
        let short = rng.gen_range(18..=long - 10);
        let td = rng.gen_range(10..=95);
        if td == long || td == short {
            continue;
        }
        let values = [long, short, td];
        let mut sums = Vec::with_capacity(26);
        for code in 1..27usize {
            let mut c = code;
            let mut total = 0;
            for x in values {
                total += x * [0, 1, -1][c % 3];
                c /= 3;
            }
            sums.push(total);
        }
        let unique = |target: i64| sums.iter().filter(|&&s| s == target).count() == 1;
        let small = sums.iter().any(|s| (0..=9).contains(s));
        if !small && [long, short, long + short, long - short].into_iter().all(unique) {
            return (long, short, td);
        }
    }
}

fn football<R: Rng>(rng: &mut R, kind: Kind, id: String) -> RawInstance {
    let teams = pick(rng, &TEAMS, 3);
    let players = pick(rng, &PLAYERS, 3);
    let (long, short, td) = yardages(rng);
    let (winner, loser) = (teams[0], teams[1]);
    let scorer_team = teams[2];
    let count_team = teams[rng.gen_range(0..2)];
    let k = rng.gen_range(1..=4);
    let mut quarters: Vec<&str> = QUARTERS.choose_multiple(rng, k).copied().collect();
    quarters.sort_by_key(|q| QUARTERS.iter().position(|x| x == q));

    let sentences = [
        format!("The longest field goal was a {long}-yard kick by {}.", players[0]),
        format!("The shortest field goal was a {short}-yard kick by {}.", players[1]),
        format!(
            "{} caught a {td}-yard touchdown pass as the {scorer_team} scored the final touchdown.",
            players[2]
        ),
        format!("The {winner} made more field goals than the {loser}."),
        quarter_sentence(count_team, &quarters),
    ];
    let passage = sentences.join(" ");

    // Options are listed in the order the passage mentions them.
    let (a, b) = (winner, loser);
    let (question, answer) = match kind {
        Kind::Max => ("How many yards was the longest field goal?".to_string(), GoldAnswer::number(long.to_string())),
        Kind::Min => ("How many yards was the shortest field goal?".to_string(), GoldAnswer::number(short.to_string())),
        Kind::Argmax => ("Which player kicked the longest field goal?".to_string(), GoldAnswer::spans([players[0]])),
        Kind::Argmin => ("Which player kicked the shortest field goal?".to_string(), GoldAnswer::spans([players[1]])),
        Kind::Addition => (
            "How many total yards of field goals were kicked?".to_string(),
            GoldAnswer::number((long + short).to_string()),
        ),
        Kind::Diff => (
            "What was the difference in yards between the two field goals?".to_string(),
            GoldAnswer::number((long - short).to_string()),
        ),
        Kind::Count => (format!("How many field goals did the {count_team} kick?"), GoldAnswer::number(k.to_string())),
        Kind::Argmore => (format!("Who scored more field goals, the {a} or the {b}?"), GoldAnswer::spans([winner])),
        Kind::Argless => (format!("Who scored less field goals, the {a} or the {b}?"), GoldAnswer::spans([loser])),
        Kind::Span => ("Which team scored the final touchdown?".to_string(), GoldAnswer::spans([scorer_team])),
        Kind::MultiSpan => ("Which players kicked field goals?".to_string(), GoldAnswer::spans([players[0], players[1]])),
        Kind::KeyValue => unreachable!("census passages are built separately"),
    };
    RawInstance {
        id,
        passage_text: passage,
        question_text: question,
        answers: vec![answer],
    }
}

fn census<R: Rng>(rng: &mut R, id: String) -> RawInstance {
    let city = CITIES[rng.gen_range(0..CITIES.len())];
    let car = rng.gen_range(20..=89);
    let children = loop {
        let v = rng.gen_range(20..=89);
        if v != car {
            break v;
        }
    };
    let passage = format!(
        "In {city}, {car} percent of households owned a car and {children} percent of households had children."
    );
    let (question, value) = if rng.gen_bool(0.5) {
        ("How many percent of households owned a car?", car)
    } else {
        ("How many percent of households had children?", children)
    };
    RawInstance {
        id,
        passage_text: passage,
        question_text: question.to_string(),
        answers: vec![GoldAnswer::number(value.to_string())],
    }
}

/// `n` instances cycling through every question kind.
pub fn generate(n: usize, seed: u64, prefix: &str) -> Vec<RawInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = Kind::ALL[i % Kind::ALL.len()];
            let id = format!("{prefix}-{i:04}");
            match kind {
                Kind::KeyValue => census(&mut rng, id),
                _ => football(&mut rng, kind, id),
            }
        })
        .collect()
}

/// Training and held-out splits drawn from independent streams of one seed.
pub fn corpus(seed: u64, train: usize, held_out: usize) -> (Vec<RawInstance>, Vec<RawInstance>) {
    (
        generate(train, seed, "synth-train"),
        generate(held_out, seed.wrapping_add(0x9e37_79b9_7f4a_7c15), "synth-heldout"),
    )
}

/// A short hand-labeled instance whose derivations touch every answer head,
/// used for gradient checks.
pub fn gradcheck_instance(vocab: &Vocab, max_seq_len: usize) -> Result<Instance> {
    let context = build_context(
        TokenizedText::new("How many yards was the longest field goal?"),
        TokenizedText::new("Bears kicked 29 and 80 yards."),
        vocab,
        max_seq_len,
    )?;
    let numbers = context_numbers(&context);
    let p = context.p_range.start;
    let q = context.q_range.start;
    let mut tags = vec![BioTag::O; context.len()];
    tags[p] = BioTag::B;
    tags[p + 1] = BioTag::I;
    tags[p + 4] = BioTag::B;
    let derivations = vec![
        Derivation {
            answer_type: AnswerType::QuestionSpan,
            label: Label::Span { start: q + 2, end: q + 2 },
        },
        Derivation {
            answer_type: AnswerType::PassageSpan,
            label: Label::Span { start: p + 4, end: p + 4 },
        },
        Derivation {
            answer_type: AnswerType::ArithmeticExpression,
            label: Label::Signs(vec![0, 1]),
        },
        Derivation {
            answer_type: AnswerType::Count,
            label: Label::Count(2),
        },
        Derivation {
            answer_type: AnswerType::MultiSpans,
            label: Label::Bio(tags),
        },
    ];
    let answer = GoldAnswer::number("80");
    Ok(Instance {
        id: "gradcheck".into(),
        context,
        numbers,
        answers: vec![answer.clone()],
        operations: OperationSet::from([Operation::Max, Operation::Argmax]),
        derivations: DerivationSet {
            derivations,
            gold_answer: answer,
            dropped: 0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_vocab, label_all};
    use crate::rules::RuleSet;

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate(24, 5, "x"), generate(24, 5, "x"));
        assert_ne!(generate(24, 5, "x"), generate(24, 6, "x"));
    }

    #[test]
    fn every_instance_is_usable_and_labeled() {
        let raws = generate(48, 1, "t");
        let vocab = build_vocab(&raws, 1);
        let insts = label_all(&raws, &vocab, &RuleSet::bundled(), 128).unwrap();
        for (i, inst) in insts.iter().enumerate() {
            let kind = Kind::ALL[i % 12];
            assert!(inst.usable(), "{kind:?}: {}", inst.context.question.text);
            let expected: OperationSet = kind.operation().into_iter().collect();
            assert_eq!(inst.operations, expected, "{}", inst.context.question.text);
            if kind == Kind::Count {
                assert!(inst
                    .derivations
                    .derivations
                    .iter()
                    .all(|d| d.answer_type == AnswerType::Count));
            }
        }
    }
}
