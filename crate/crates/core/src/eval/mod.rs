//! Decoding, answer scoring and the operation diagnostics.

pub mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerKind, Context, NumberMention};
use crate::dataset::Instance;
use crate::derivations::{evaluate_signs, execute, AnswerType, BioTag, Derivation, Label, SIGN_CLASSES};
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, Model};
use crate::rules::{Operation, OperationSet};

pub use metrics::{em_f1, em_f1_max, normalize, Normalized};

pub const DEFAULT_MAX_SPAN_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Spans satisfy `start <= end <= start + max_span_len`.
    pub max_span_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_span_len: DEFAULT_MAX_SPAN_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    /// Never empty; a single empty string when every answer type was degenerate.
    pub answers: Vec<String>,
    pub answer_type: AnswerType,
    pub p_op: Vec<f64>,
    pub p_type: Vec<f64>,
    pub label: Option<Label>,
    pub degenerate: bool,
}

/// One line of the predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answers: Vec<String>,
    #[serde(rename = "type")]
    pub answer_type: AnswerType,
    pub p_op: Vec<f64>,
    pub p_type: Vec<f64>,
}

impl From<&Prediction> for PredictionRecord {
    fn from(p: &Prediction) -> Self {
        PredictionRecord {
            id: p.id.clone(),
            answers: p.answers.clone(),
            answer_type: p.answer_type,
            p_op: p.p_op.clone(),
            p_type: p.p_type.clone(),
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[best]).is_gt() {
            best = i;
        }
    }
    best
}

/// Highest `start + end` log-score under the length constraint.
pub fn best_span(start: &[f64], end: &[f64], max_span_len: usize) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (s, sv) in start.iter().enumerate() {
        let last = (s + max_span_len).min(end.len().saturating_sub(1));
        for (e, ev) in end.iter().enumerate().take(last + 1).skip(s) {
            let score = sv + ev;
            if score.is_nan() {
                continue;
            }
            if best.map_or(true, |(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}

/// Per-token argmax tags with separators forced to O and leading I repaired to B.
pub fn decode_bio(bio: &[[f64; 3]], ctx: &Context) -> Vec<BioTag> {
    let mut tags: Vec<BioTag> = bio
        .iter()
        .enumerate()
        .map(|(pos, row)| {
            if ctx.locate(pos).is_none() {
                BioTag::O
            } else {
                BioTag::ALL[argmax(row)]
            }
        })
        .collect();
    let mut prev = BioTag::O;
    for t in tags.iter_mut() {
        if *t == BioTag::I && prev == BioTag::O {
            *t = BioTag::B;
        }
        prev = *t;
    }
    tags
}

fn decode_type(
    t: AnswerType,
    out: &ForwardOutput,
    ctx: &Context,
    numbers: &[NumberMention],
    opts: &DecodeOptions,
) -> Option<(Vec<String>, Label)> {
    match t {
        AnswerType::QuestionSpan | AnswerType::PassageSpan => {
            let (range, s_tab, e_tab) = if t == AnswerType::QuestionSpan {
                (&ctx.q_range, &out.question_start, &out.question_end)
            } else {
                (&ctx.p_range, &out.passage_start, &out.passage_end)
            };
            if range.is_empty() || s_tab.len() != range.len() || e_tab.len() != range.len() {
                return None;
            }
            let (s, e) = best_span(s_tab, e_tab, opts.max_span_len)?;
            let label = Label::Span {
                start: range.start + s,
                end: range.start + e,
            };
            let text = ctx.span_text(range.start + s, range.start + e).ok()?;
            Some((vec![text.to_string()], label))
        }
        AnswerType::Count => {
            if out.count.is_empty() {
                return None;
            }
            let k = argmax(&out.count);
            Some((vec![k.to_string()], Label::Count(k as u8)))
        }
        AnswerType::ArithmeticExpression => {
            if numbers.is_empty() || out.signs.len() != numbers.len() {
                return None;
            }
            let signs: Vec<i8> = out.signs.iter().map(|row| SIGN_CLASSES[argmax(row)]).collect();
            if signs.iter().all(|&s| s == 0) {
                return None;
            }
            let value = evaluate_signs(&signs, numbers).ok()?;
            Some((vec![value.to_string()], Label::Signs(signs)))
        }
        AnswerType::MultiSpans => {
            if out.bio.len() != ctx.len() {
                return None;
            }
            let label = Label::Bio(decode_bio(&out.bio, ctx));
            let d = Derivation {
                answer_type: t,
                label,
            };
            let texts = execute(&d, ctx, numbers).ok()?;
            if texts.is_empty() {
                return None;
            }
            Some((texts, d.label))
        }
    }
}

/// Picks the most probable answer type, falling back down the ranking when a
/// type decodes to nothing usable.
pub fn decode(id: &str, out: &ForwardOutput, ctx: &Context, numbers: &[NumberMention], opts: &DecodeOptions) -> Prediction {
    let mut order: Vec<usize> = (0..AnswerType::COUNT).collect();
    order.sort_by(|&a, &b| {
        let pa = out.p_type.get(a).copied().unwrap_or(f64::NEG_INFINITY);
        let pb = out.p_type.get(b).copied().unwrap_or(f64::NEG_INFINITY);
        pb.total_cmp(&pa).then(a.cmp(&b))
    });
    for &i in &order {
        let t = AnswerType::ALL[i];
        if let Some((answers, label)) = decode_type(t, out, ctx, numbers, opts) {
            return Prediction {
                id: id.to_string(),
                answers,
                answer_type: t,
                p_op: out.p_op.clone(),
                p_type: out.p_type.clone(),
                label: Some(label),
                degenerate: false,
            };
        }
    }
    Prediction {
        id: id.to_string(),
        answers: vec![String::new()],
        answer_type: AnswerType::ALL[order[0]],
        p_op: out.p_op.clone(),
        p_type: out.p_type.clone(),
        label: None,
        degenerate: true,
    }
}

pub fn predict(model: &Model, inst: &Instance, opts: &DecodeOptions) -> Result<Prediction> {
    let out = model.predict_output(&inst.context, &inst.numbers)?;
    Ok(decode(&inst.id, &out, &inst.context, &inst.numbers, opts))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
    pub by_kind: BTreeMap<String, KindMetrics>,
}

impl MetricsReport {
    pub fn kind_csv(&self) -> String {
        let mut s = String::from("kind,em,f1,n\n");
        for (k, m) in &self.by_kind {
            s.push_str(&format!("{k},{},{},{}\n", m.em, m.f1, m.n));
        }
        s.push_str(&format!("overall,{},{},{}\n", self.em, self.f1, self.n));
        s
    }
}

/// Aggregates per-instance `(kind, em, f1)` scores.
pub fn aggregate(scores: &[(String, f64, f64)]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut report = MetricsReport::default();
    for (kind, em, f1) in scores {
        report.em += em;
        report.f1 += f1;
        let k = report.by_kind.entry(kind.clone()).or_default();
        k.em += em;
        k.f1 += f1;
        k.n += 1;
    }
    report.n = scores.len();
    report.em /= report.n as f64;
    report.f1 /= report.n as f64;
    for k in report.by_kind.values_mut() {
        k.em /= k.n as f64;
        k.f1 /= k.n as f64;
    }
    Ok(report)
}

/// Decodes every instance and scores it against all gold alternates.
pub fn evaluate(model: &Model, instances: &[Instance], opts: &DecodeOptions) -> Result<(MetricsReport, Vec<Prediction>)> {
    if instances.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut preds = Vec::with_capacity(instances.len());
    let mut scores = Vec::with_capacity(instances.len());
    for inst in instances {
        let p = predict(model, inst, opts)?;
        let (em, f1) = em_f1_max(&p.answers, &inst.gold_alternates());
        scores.push((inst.kind().as_str().to_string(), em, f1));
        preds.push(p);
    }
    Ok((aggregate(&scores)?, preds))
}

/// Operations ranked by probability, ties broken by index.
pub fn top_operations(p_op: &[f64], n: usize) -> Vec<Operation> {
    let mut idx: Vec<usize> = (0..p_op.len().min(Operation::COUNT)).collect();
    idx.sort_by(|&a, &b| p_op[b].total_cmp(&p_op[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).filter_map(Operation::from_index).collect()
}

/// Fraction of instances with gold operations whose top-n predictions include one.
pub fn operation_p_at_n(p_ops: &[&[f64]], gold: &[&OperationSet], n: usize) -> Result<f64> {
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for (p, g) in p_ops.iter().zip(gold) {
        if g.is_empty() {
            continue;
        }
        eligible += 1;
        if top_operations(p, n).iter().any(|o| g.contains(o)) {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::Data("no instances carry operation labels".into()));
    }
    Ok(hits as f64 / eligible as f64)
}

/// P@1..=P@11 as CSV.
pub fn p_at_n_csv(p_ops: &[&[f64]], gold: &[&OperationSet]) -> Result<String> {
    let mut s = String::from("n,p_at_n\n");
    for n in 1..=Operation::COUNT {
        s.push_str(&format!("{n},{}\n", operation_p_at_n(p_ops, gold, n)?));
    }
    Ok(s)
}

/// Operation × predicted-answer-type mass, each non-empty row normalized to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub rows: Vec<[f64; AnswerType::COUNT]>,
    /// Operations that received no mass.
    pub empty_rows: Vec<Operation>,
}

impl CorrelationMatrix {
    pub fn row(&self, op: Operation) -> &[f64; AnswerType::COUNT] {
        &self.rows[op.index()]
    }

    pub fn argmax(&self, op: Operation) -> Option<AnswerType> {
        if self.empty_rows.contains(&op) {
            return None;
        }
        AnswerType::from_index(argmax(self.row(op)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("operation");
        for t in AnswerType::ALL {
            s.push(',');
            s.push_str(t.name());
        }
        s.push('\n');
        for op in Operation::ALL {
            s.push_str(op.tag());
            for v in self.row(op) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn correlation_matrix(predictions: &[Prediction]) -> CorrelationMatrix {
    let mut rows = vec![[0.0; AnswerType::COUNT]; Operation::COUNT];
    for p in predictions {
        let col = p.answer_type.index();
        for (row, v) in rows.iter_mut().zip(&p.p_op) {
            row[col] += v;
        }
    }
    let mut empty_rows = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            empty_rows.extend(Operation::from_index(i));
        }
    }
    CorrelationMatrix { rows, empty_rows }
}

/// Headline numbers for one side of a paired run.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub lambda_op: f64,
    pub ablate_op: bool,
    pub report: MetricsReport,
    /// `None` for ablated models, whose `p_op` is a constant.
    pub p_at_1: Option<f64>,
    pub p_at_2: Option<f64>,
}

impl ComparisonRow {
    pub fn new(name: impl Into<String>, model: &Model, report: MetricsReport, preds: &[Prediction], instances: &[Instance]) -> Result<Self> {
        let (p_at_1, p_at_2) = if model.config.ablate_op {
            (None, None)
        } else {
            let ps: Vec<&[f64]> = preds.iter().map(|p| p.p_op.as_slice()).collect();
            let gold: Vec<&OperationSet> = instances.iter().map(|i| &i.operations).collect();
            (Some(operation_p_at_n(&ps, &gold, 1)?), Some(operation_p_at_n(&ps, &gold, 2)?))
        };
        Ok(ComparisonRow {
            name: name.into(),
            lambda_op: model.config.effective_lambda(),
            ablate_op: model.config.ablate_op,
            report,
            p_at_1,
            p_at_2,
        })
    }
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("model,lambda_op,ablate_op,em,f1,num_em,spans_em,p_at_1,p_at_2\n");
    for r in rows {
        let kind_em = |k: &str| r.report.by_kind.get(k).map(|m| m.em);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.lambda_op,
            r.ablate_op,
            r.report.em,
            r.report.f1,
            opt(kind_em(AnswerKind::Number.as_str())),
            opt(kind_em(AnswerKind::Spans.as_str())),
            opt(r.p_at_1),
            opt(r.p_at_2)
        ));
    }
    s
}
