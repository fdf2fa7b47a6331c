//! Weak supervision: enumerate every derivation (answer type + label) whose
//! execution reproduces the gold answer, and execute derivations to text.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Context, Decimal, GoldAnswer, NumberMention, Segment};
use crate::error::{Error, Result};
use crate::eval::metrics::{em_f1, normalize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    QuestionSpan,
    PassageSpan,
    Count,
    ArithmeticExpression,
    MultiSpans,
}

impl AnswerType {
    pub const COUNT: usize = 5;

    pub const ALL: [AnswerType; 5] = [
        AnswerType::QuestionSpan,
        AnswerType::PassageSpan,
        AnswerType::Count,
        AnswerType::ArithmeticExpression,
        AnswerType::MultiSpans,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AnswerType> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AnswerType::QuestionSpan => "QuestionSpan",
            AnswerType::PassageSpan => "PassageSpan",
            AnswerType::Count => "Count",
            AnswerType::ArithmeticExpression => "ArithmeticExpression",
            AnswerType::MultiSpans => "MultiSpans",
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-number sign; class order on the sign head is (zero, plus, minus).
pub const SIGN_CLASSES: [i8; 3] = [0, 1, -1];

pub fn sign_class(sign: i8) -> Option<usize> {
    SIGN_CLASSES.iter().position(|&s| s == sign)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BioTag {
    B,
    I,
    O,
}

impl BioTag {
    pub const ALL: [BioTag; 3] = [BioTag::B, BioTag::I, BioTag::O];

    pub fn class(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    /// Inclusive joint-sequence token indices.
    Span { start: usize, end: usize },
    /// One sign in {-1, 0, +1} per number mention.
    Signs(Vec<i8>),
    Count(u8),
    /// One tag per joint-sequence token.
    Bio(Vec<BioTag>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Derivation {
    #[serde(rename = "type")]
    pub answer_type: AnswerType,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivationSet {
    pub derivations: Vec<Derivation>,
    pub gold_answer: GoldAnswer,
    /// Candidates that failed the execution check.
    pub dropped: usize,
}

impl DerivationSet {
    pub fn is_empty(&self) -> bool {
        self.derivations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.derivations.len()
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Derivation(msg.into())
}

/// Checks a derivation's label invariants against the context.
pub fn validate(d: &Derivation, ctx: &Context, numbers: &[NumberMention]) -> Result<()> {
    match (&d.label, d.answer_type) {
        (Label::Span { start, end }, t @ (AnswerType::QuestionSpan | AnswerType::PassageSpan)) => {
            let range = if t == AnswerType::QuestionSpan {
                ctx.q_range.clone()
            } else {
                ctx.p_range.clone()
            };
            if start > end || !range.contains(start) || !range.contains(end) {
                return Err(invalid(format!("{t} span {start}..={end} outside {range:?}")));
            }
        }
        (Label::Signs(signs), AnswerType::ArithmeticExpression) => {
            if signs.len() != numbers.len() {
                return Err(invalid(format!(
                    "{} signs for {} numbers",
                    signs.len(),
                    numbers.len()
                )));
            }
            if signs.iter().any(|s| sign_class(*s).is_none()) {
                return Err(invalid("sign outside {-1, 0, 1}"));
            }
        }
        (Label::Count(k), AnswerType::Count) => {
            if *k > 9 {
                return Err(invalid(format!("count {k} outside 0..=9")));
            }
        }
        (Label::Bio(tags), AnswerType::MultiSpans) => {
            if tags.len() != ctx.len() {
                return Err(invalid(format!("{} tags for {} tokens", tags.len(), ctx.len())));
            }
            let mut prev = BioTag::O;
            for (pos, tag) in tags.iter().enumerate() {
                if *tag != BioTag::O && ctx.locate(pos).is_none() {
                    return Err(invalid(format!("tag on separator position {pos}")));
                }
                if *tag == BioTag::I && prev == BioTag::O {
                    return Err(invalid(format!("I after O at position {pos}")));
                }
                prev = *tag;
            }
        }
        (label, t) => return Err(invalid(format!("label {label:?} does not fit answer type {t}"))),
    }
    Ok(())
}

/// Signed sum of the selected numbers.
pub fn evaluate_signs(signs: &[i8], numbers: &[NumberMention]) -> Result<Decimal> {
    let mut total = Decimal::ZERO;
    for (s, n) in signs.iter().zip(numbers) {
        let term = match s {
            0 => continue,
            1 => n.value,
            -1 => n.value.checked_neg().ok_or_else(|| invalid("overflow"))?,
            _ => return Err(invalid("sign outside {-1, 0, 1}")),
        };
        total = total.checked_add(term).ok_or_else(|| invalid("arithmetic overflow"))?;
    }
    Ok(total)
}

/// Maximal B/I runs as inclusive joint ranges.
pub fn bio_runs(tags: &[BioTag]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::B => {
                if let Some(s) = open.take() {
                    runs.push((s, i - 1));
                }
                open = Some(i);
            }
            BioTag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            BioTag::O => {
                if let Some(s) = open.take() {
                    runs.push((s, i - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        runs.push((s, tags.len() - 1));
    }
    runs
}

/// Runs the derivation to answer text(s).
pub fn execute(d: &Derivation, ctx: &Context, numbers: &[NumberMention]) -> Result<Vec<String>> {
    validate(d, ctx, numbers)?;
    Ok(match &d.label {
        Label::Span { start, end } => vec![ctx.span_text(*start, *end)?.to_string()],
        Label::Signs(signs) => vec![evaluate_signs(signs, numbers)?.to_string()],
        Label::Count(k) => vec![k.to_string()],
        Label::Bio(tags) => {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for (s, e) in bio_runs(tags) {
                let text = ctx.span_text(s, e)?.to_string();
                if seen.insert(normalize(&text).text) {
                    out.push(text);
                }
            }
            out
        }
    })
}

fn token_key(text: &str) -> String {
    if text.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.') {
        if let Some(d) = Decimal::parse(text) {
            return d.to_string();
        }
    }
    text.to_lowercase()
}

fn answer_keys(answer: &str) -> Vec<String> {
    tokenize(answer).iter().map(|t| token_key(&t.text)).collect()
}

/// Joint (start, end) of every token-aligned occurrence of `keys` in a segment.
fn occurrences(ctx: &Context, segment: Segment, keys: &[String]) -> Vec<(usize, usize)> {
    if keys.is_empty() {
        return Vec::new();
    }
    let seg_keys: Vec<String> = ctx.segment(segment).tokens.iter().map(|t| token_key(&t.text)).collect();
    let base = ctx.range(segment).start;
    seg_keys
        .windows(keys.len())
        .enumerate()
        .filter(|(_, w)| *w == keys)
        .map(|(i, _)| (base + i, base + i + keys.len() - 1))
        .collect()
}

pub fn search_spans(ctx: &Context, gold: &GoldAnswer) -> Vec<Derivation> {
    let texts = gold.texts();
    let [target] = texts.as_slice() else {
        return Vec::new();
    };
    let keys = answer_keys(target);
    let mut out = Vec::new();
    for (segment, answer_type) in [
        (Segment::Question, AnswerType::QuestionSpan),
        (Segment::Passage, AnswerType::PassageSpan),
    ] {
        for (start, end) in occurrences(ctx, segment, &keys) {
            out.push(Derivation {
                answer_type,
                label: Label::Span { start, end },
            });
        }
    }
    out
}

pub const DEFAULT_MAX_TERMS: usize = 3;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

fn gold_number(gold: &GoldAnswer) -> Option<Decimal> {
    match gold {
        GoldAnswer::Number { number_text } => Decimal::parse(number_text.trim()),
        _ => None,
    }
}

/// All sign vectors with 1..=`max_terms` non-zero entries whose signed sum is
/// within `tol` of the gold number.
pub fn search_arithmetic(numbers: &[NumberMention], gold: &GoldAnswer, max_terms: usize, tol: f64) -> Vec<Derivation> {
    let Some(target) = gold_number(gold) else {
        return Vec::new();
    };
    let n = numbers.len();
    if n == 0 || max_terms == 0 {
        return Vec::new();
    }
    let scale = numbers.iter().map(|m| m.value.scale()).chain([target.scale()]).max().unwrap_or(0);
    let scaled: Option<Vec<i128>> = numbers.iter().map(|m| m.value.at_scale(scale)).collect();
    let (Some(values), Some(t)) = (scaled, target.at_scale(scale)) else {
        return Vec::new();
    };
    let unit = 10f64.powi(scale as i32);
    let within = |sum: i128| sum == t || (sum.abs_diff(t) as f64) / unit <= tol;

    let mut out = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(max_terms);
    combos(n, max_terms.min(n), 0, &mut chosen, &mut |idx: &[usize]| {
        let k = idx.len();
        for pattern in 0..(1u32 << k) {
            let mut sum: i128 = 0;
            for (bit, &i) in idx.iter().enumerate() {
                if pattern & (1 << bit) == 0 {
                    sum += values[i];
                } else {
                    sum -= values[i];
                }
            }
            if within(sum) {
                let mut signs = vec![0i8; n];
                for (bit, &i) in idx.iter().enumerate() {
                    signs[i] = if pattern & (1 << bit) == 0 { 1 } else { -1 };
                }
                out.push(Derivation {
                    answer_type: AnswerType::ArithmeticExpression,
                    label: Label::Signs(signs),
                });
            }
        }
    });
    out
}

/// Visits every non-empty index subset of size at most `max` in lexicographic order.
fn combos(n: usize, max: usize, from: usize, chosen: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    for i in from..n {
        chosen.push(i);
        visit(chosen);
        if chosen.len() < max {
            combos(n, max, i + 1, chosen, visit);
        }
        chosen.pop();
    }
}

pub fn search_count(gold: &GoldAnswer) -> Vec<Derivation> {
    match gold_number(gold).and_then(|d| d.as_integer()) {
        Some(k @ 0..=9) => vec![Derivation {
            answer_type: AnswerType::Count,
            label: Label::Count(k as u8),
        }],
        _ => Vec::new(),
    }
}

/// One BIO labeling tagging every occurrence of every gold span. Overlaps are
/// resolved longest span first, then left to right.
pub fn search_multispan(ctx: &Context, gold: &GoldAnswer) -> Vec<Derivation> {
    if matches!(gold, GoldAnswer::Number { .. }) {
        return Vec::new();
    }
    let mut targets: Vec<Vec<String>> = Vec::new();
    for text in gold.texts() {
        let keys = answer_keys(&text);
        if keys.is_empty() {
            return Vec::new();
        }
        if !targets.contains(&keys) {
            targets.push(keys);
        }
    }
    if targets.is_empty() {
        return Vec::new();
    }
    let mut found: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for keys in &targets {
        let mut occ = occurrences(ctx, Segment::Question, keys);
        occ.extend(occurrences(ctx, Segment::Passage, keys));
        if occ.is_empty() {
            return Vec::new();
        }
        found.push((keys.len(), occ));
    }
    found.sort_by(|a, b| b.0.cmp(&a.0));
    let mut tags = vec![BioTag::O; ctx.len()];
    for (_, occ) in found {
        for (s, e) in occ {
            if tags[s..=e].iter().all(|t| *t == BioTag::O) {
                tags[s] = BioTag::B;
                for t in &mut tags[s + 1..=e] {
                    *t = BioTag::I;
                }
            }
        }
    }
    vec![Derivation {
        answer_type: AnswerType::MultiSpans,
        label: Label::Bio(tags),
    }]
}

/// True when executed texts match the gold answer after normalization.
pub fn matches_gold(texts: &[String], gold: &GoldAnswer) -> bool {
    let mut gold_texts = gold.texts();
    let mut seen = HashSet::new();
    gold_texts.retain(|g| seen.insert(normalize(g).text));
    em_f1(texts, &gold_texts).0 == 1.0
}

pub fn search_all(ctx: &Context, numbers: &[NumberMention], gold: &GoldAnswer) -> DerivationSet {
    search_all_with(ctx, numbers, gold, DEFAULT_MAX_TERMS, DEFAULT_TOLERANCE)
}

pub fn search_all_with(
    ctx: &Context,
    numbers: &[NumberMention],
    gold: &GoldAnswer,
    max_terms: usize,
    tol: f64,
) -> DerivationSet {
    let mut candidates = search_spans(ctx, gold);
    candidates.extend(search_arithmetic(numbers, gold, max_terms, tol));
    candidates.extend(search_count(gold));
    candidates.extend(search_multispan(ctx, gold));

    let mut seen = HashSet::new();
    let mut derivations = Vec::new();
    let mut dropped = 0;
    for d in candidates {
        if !seen.insert(d.clone()) {
            continue;
        }
        match execute(&d, ctx, numbers) {
            Ok(texts) if matches_gold(&texts, gold) => derivations.push(d),
            _ => dropped += 1,
        }
    }
    DerivationSet {
        derivations,
        gold_answer: gold.clone(),
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_context, extract_numbers, TokenizedText, Vocab};

    fn setup(question: &str, passage: &str) -> (Context, Vec<NumberMention>) {
        let vocab = Vocab::build(std::iter::empty(), 1);
        let ctx = build_context(TokenizedText::new(question), TokenizedText::new(passage), &vocab, 512).unwrap();
        let mut numbers = extract_numbers(&ctx.question.tokens, Segment::Question);
        numbers.extend(extract_numbers(&ctx.passage.tokens, Segment::Passage));
        (ctx, numbers)
    }

    fn signs_of(ds: &[Derivation]) -> Vec<Vec<i8>> {
        ds.iter()
            .filter_map(|d| match &d.label {
                Label::Signs(s) => Some(s.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn executes_each_label_kind() {
        let (ctx, nums) = setup("How many?", "scores of 23 , 40 and 10 points");
        let ae = Derivation {
            answer_type: AnswerType::ArithmeticExpression,
            label: Label::Signs(vec![1, 1, 1]),
        };
        assert_eq!(execute(&ae, &ctx, &nums).unwrap(), ["73"]);
        let c = Derivation {
            answer_type: AnswerType::Count,
            label: Label::Count(0),
        };
        assert_eq!(execute(&c, &ctx, &nums).unwrap(), ["0"]);
        let p = ctx.p_range.start;
        let span = Derivation {
            answer_type: AnswerType::PassageSpan,
            label: Label::Span { start: p, end: p + 1 },
        };
        assert_eq!(execute(&span, &ctx, &nums).unwrap(), ["scores of"]);
    }

    #[test]
    fn execution_rejects_invalid_labels() {
        let (ctx, nums) = setup("How many?", "a 29-yard pass and an 80-yard return");
        let bad = [
            Derivation { answer_type: AnswerType::PassageSpan, label: Label::Span { start: 1, end: 1 } },
            Derivation { answer_type: AnswerType::QuestionSpan, label: Label::Span { start: 2, end: 1 } },
            Derivation { answer_type: AnswerType::ArithmeticExpression, label: Label::Signs(vec![1]) },
            Derivation { answer_type: AnswerType::ArithmeticExpression, label: Label::Signs(vec![2, 0]) },
            Derivation { answer_type: AnswerType::Count, label: Label::Count(10) },
            Derivation { answer_type: AnswerType::Count, label: Label::Signs(vec![0, 1]) },
            Derivation { answer_type: AnswerType::MultiSpans, label: Label::Bio(vec![BioTag::O; 3]) },
        ];
        for d in &bad {
            assert!(execute(d, &ctx, &nums).is_err(), "{d:?}");
        }
        let mut tags = vec![BioTag::O; ctx.len()];
        tags[ctx.p_range.start] = BioTag::I;
        let d = Derivation { answer_type: AnswerType::MultiSpans, label: Label::Bio(tags) };
        assert!(execute(&d, &ctx, &nums).is_err());
        let mut tags = vec![BioTag::O; ctx.len()];
        tags[0] = BioTag::B;
        let d = Derivation { answer_type: AnswerType::MultiSpans, label: Label::Bio(tags) };
        assert!(execute(&d, &ctx, &nums).is_err());
    }

    #[test]
    fn arithmetic_small_cases() {
        let (_, nums) = setup("x", "5 and 3");
        assert_eq!(signs_of(&search_arithmetic(&nums, &GoldAnswer::number("2"), 3, 1e-5)), [vec![1, -1]]);
        assert_eq!(signs_of(&search_arithmetic(&nums, &GoldAnswer::number("8"), 3, 1e-5)), [vec![1, 1]]);
        assert!(search_arithmetic(&nums, &GoldAnswer::number("0"), 3, 1e-5).is_empty());
        assert!(search_arithmetic(&[], &GoldAnswer::number("0"), 3, 1e-5).is_empty());
        assert!(search_arithmetic(&nums, &GoldAnswer::spans(["5"]), 3, 1e-5).is_empty());
    }

    #[test]
    fn arithmetic_decimals_are_exact() {
        let (_, nums) = setup("x", "0.1 and 0.2");
        assert_eq!(signs_of(&search_arithmetic(&nums, &GoldAnswer::number("0.3"), 3, 1e-5)), [vec![1, 1]]);
    }

    #[test]
    fn three_term_sum() {
        let (_, nums) = setup("x", "passes of 23, 40 and 10 yards");
        let found = signs_of(&search_arithmetic(&nums, &GoldAnswer::number("73"), 3, 1e-5));
        assert!(found.contains(&vec![1, 1, 1]));
    }

    #[test]
    fn count_range() {
        assert_eq!(search_count(&GoldAnswer::number("3"))[0].label, Label::Count(3));
        assert_eq!(search_count(&GoldAnswer::number("0"))[0].label, Label::Count(0));
        assert!(search_count(&GoldAnswer::number("73")).is_empty());
        assert!(search_count(&GoldAnswer::number("2.5")).is_empty());
        assert!(search_count(&GoldAnswer::spans(["3"])).is_empty());
    }

    #[test]
    fn span_occurrences() {
        let (ctx, _) = setup("Who threw to Russell?", "Russell caught it. Later Russell ran.");
        let ds = search_spans(&ctx, &GoldAnswer::spans(["Russell"]));
        let types: Vec<_> = ds.iter().map(|d| d.answer_type).collect();
        assert_eq!(
            types,
            [AnswerType::QuestionSpan, AnswerType::PassageSpan, AnswerType::PassageSpan]
        );
        assert!(search_spans(&ctx, &GoldAnswer::spans(["Potter"])).is_empty());
        assert!(search_spans(&ctx, &GoldAnswer::spans(["Russell", "Later"])).is_empty());
    }

    #[test]
    fn multispan_tags_all_gold_spans() {
        let (ctx, nums) = setup(
            "Who scored more field goals?",
            "Kris Brown kicked two and John Potter kicked one.",
        );
        let gold = GoldAnswer::spans(["Kris Brown", "John Potter"]);
        let ds = search_multispan(&ctx, &gold);
        assert_eq!(ds.len(), 1);
        let Label::Bio(tags) = &ds[0].label else { panic!() };
        assert_eq!(tags.iter().filter(|t| **t == BioTag::B).count(), 2);
        assert_eq!(execute(&ds[0], &ctx, &nums).unwrap(), ["Kris Brown", "John Potter"]);
        assert!(search_multispan(&ctx, &GoldAnswer::spans(["Kris Brown", "Akers"])).is_empty());
    }

    #[test]
    fn multispan_overlap_prefers_longer() {
        let (ctx, nums) = setup("q", "John Potter and Potter");
        let ds = search_multispan(&ctx, &GoldAnswer::spans(["Potter", "John Potter"]));
        let Label::Bio(tags) = &ds[0].label else { panic!() };
        let p = ctx.p_range.start;
        assert_eq!(&tags[p..p + 4], &[BioTag::B, BioTag::I, BioTag::O, BioTag::B]);
        assert_eq!(execute(&ds[0], &ctx, &nums).unwrap(), ["John Potter", "Potter"]);
    }

    #[test]
    fn bio_runs_split_on_b() {
        use BioTag::*;
        assert_eq!(bio_runs(&[O, B, I, B, O, B]), [(1, 2), (3, 3), (5, 5)]);
        assert!(bio_runs(&[O, O]).is_empty());
    }

    #[test]
    fn search_all_is_sound() {
        let (ctx, nums) = setup(
            "How many yards was the longest field goals",
            "Oakland would take the lead in the third quarter with wide receiver Johnnie Lee Higgins \
             catching a 29-yard touchdown pass from Russell, followed up by an 80-yard punt return for a touchdown.",
        );
        let set = search_all(&ctx, &nums, &GoldAnswer::number("80"));
        assert_eq!(set.len(), 2);
        assert_eq!(set.derivations[0].answer_type, AnswerType::PassageSpan);
        assert_eq!(set.derivations[1].label, Label::Signs(vec![0, 1]));
        for d in &set.derivations {
            assert!(matches_gold(&execute(d, &ctx, &nums).unwrap(), &set.gold_answer));
        }
    }

    #[test]
    fn count_and_span_for_small_number() {
        let (ctx, nums) = setup("How many field goals?", "He kicked 3 field goals.");
        let set = search_all(&ctx, &nums, &GoldAnswer::number("3"));
        let types: HashSet<_> = set.derivations.iter().map(|d| d.answer_type).collect();
        assert!(types.contains(&AnswerType::Count));
        assert!(types.contains(&AnswerType::PassageSpan));
        let none = search_all(&ctx, &nums, &GoldAnswer::spans(["Zebra"]));
        assert!(none.is_empty());
    }

    #[test]
    fn hyphenated_year_range_span() {
        let (ctx, nums) = setup(
            "Which period was longer, 1963-1974 or 1979-1989?",
            "with the Oakland Raiders (1963-1974, 1979-1989), and later",
        );
        let set = search_all(&ctx, &nums, &GoldAnswer::spans(["1963-1974"]));
        let types: Vec<_> = set.derivations.iter().map(|d| d.answer_type).collect();
        assert!(types.contains(&AnswerType::QuestionSpan));
        assert!(types.contains(&AnswerType::PassageSpan));
        assert!(types.contains(&AnswerType::MultiSpans));
    }
}
