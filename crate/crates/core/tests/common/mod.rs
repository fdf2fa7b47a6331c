//! Reference helpers shared by the oracle, property and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

use opreason::corpus::{build_context, tokenize, Context, Decimal, GoldAnswer, NumberMention, TokenizedText, Vocab};
use opreason::dataset::context_numbers;
use opreason::model::{Model, ModelConfig};

const FILLER: [&str; 6] = ["kick", "pass", "run", "drive", "punt", "snap"];

pub const WORDS: [&str; 16] = [
    "the", "bears", "kicked", "a", "field", "goal", "yard", "pass", "who", "scored", "more", "less", "longest",
    "touchdown", "quarter", ",",
];

pub fn setup(question: &str, passage: &str) -> (Context, Vec<NumberMention>) {
    let vocab = Vocab::build(std::iter::empty(), 1);
    let ctx = build_context(TokenizedText::new(question), TokenizedText::new(passage), &vocab, 512).unwrap();
    let numbers = context_numbers(&ctx);
    (ctx, numbers)
}

/// A passage of up to eight numbers (in tenths, so sums stay exact) and a
/// target that is reachable about half the time.
pub struct ArithCase {
    pub values: Vec<i64>,
    pub target: i64,
    pub ctx: Context,
    pub numbers: Vec<NumberMention>,
    pub gold: GoldAnswer,
}

fn tenths_text(v: i64) -> String {
    if v % 10 == 0 {
        (v / 10).to_string()
    } else {
        format!("{}.{}", v / 10, v % 10)
    }
}

pub fn arith_case<R: Rng>(rng: &mut R) -> ArithCase {
    let n = rng.gen_range(1..=8);
    let values: Vec<i64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.3) {
                rng.gen_range(1..1000)
            } else {
                rng.gen_range(1..120) * 10
            }
        })
        .collect();
    let passage: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{} {}", FILLER[i % FILLER.len()], tenths_text(v)))
        .collect();
    let (ctx, numbers) = setup("How many yards in total?", &passage.join(" , "));
    let extracted: Vec<Decimal> = numbers.iter().map(|m| m.value).collect();
    let expected: Vec<Decimal> = values.iter().map(|&v| Decimal::new(v as i128, 1)).collect();
    assert_eq!(extracted, expected, "number extraction on {passage:?}");

    let target = if rng.gen_bool(0.5) {
        let k = rng.gen_range(1..=n.min(3));
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by_key(|_| rng.gen::<u32>());
        idx[..k].iter().map(|&i| if rng.gen_bool(0.5) { values[i] } else { -values[i] }).sum()
    } else {
        rng.gen_range(-500..2000)
    };
    let gold = GoldAnswer::number(Decimal::new(target as i128, 1).to_string());
    ArithCase {
        values,
        target,
        ctx,
        numbers,
        gold,
    }
}

/// Every vector in {0, +1, -1}^n with 1..=max_terms non-zero entries whose
/// signed sum equals `target`.
pub fn enumerate_signs(values: &[i64], target: i64, max_terms: usize) -> BTreeSet<Vec<i8>> {
    let n = values.len();
    let mut out = BTreeSet::new();
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut signs = vec![0i8; n];
        for s in signs.iter_mut() {
            *s = [0, 1, -1][c % 3];
            c /= 3;
        }
        let nonzero = signs.iter().filter(|&&s| s != 0).count();
        if nonzero == 0 || nonzero > max_terms {
            continue;
        }
        let sum: i64 = signs.iter().zip(values).map(|(&s, &v)| s as i64 * v).sum();
        if sum == target {
            out.insert(signs);
        }
    }
    out
}

pub fn word_vocab() -> Vocab {
    Vocab::build(&tokenize(&WORDS.join(" ")), 1)
}

fn sentence(words: &[usize], numbers: &[u16]) -> String {
    let mut out: Vec<String> = words.iter().map(|&i| WORDS[i % WORDS.len()].to_string()).collect();
    for (k, n) in numbers.iter().enumerate() {
        let at = (k * 3 + 1).min(out.len());
        out.insert(at, n.to_string());
    }
    out.join(" ")
}

/// Context from word indices into [`WORDS`]; numbers go into the passage.
pub fn word_context(q: &[usize], p: &[usize], numbers: &[u16]) -> (Context, Vec<NumberMention>) {
    let numbers = if p.is_empty() { &[][..] } else { numbers };
    let ctx = build_context(
        TokenizedText::new(sentence(q, &[])),
        TokenizedText::new(sentence(p, numbers)),
        &word_vocab(),
        64,
    )
    .unwrap();
    let numbers = context_numbers(&ctx);
    (ctx, numbers)
}

pub fn small_model(seed: u64, ablate_op: bool) -> Model {
    Model::new(ModelConfig {
        d_h: 8,
        n_h: 2,
        encoder_layers: 1,
        vocab_size: word_vocab().len(),
        max_seq_len: 64,
        ablate_op,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

pub fn sums_to_one(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// A row of log-probabilities that exponentiates to a distribution.
pub fn log_row_ok(row: &[f64]) -> bool {
    let p: Vec<f64> = row.iter().map(|v| v.exp()).collect();
    sums_to_one(&p)
}
