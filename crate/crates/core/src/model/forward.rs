use std::ops::Range;

use super::{FfnIds, Model, BIO_CLASSES, SIGN_CLASSES};
use crate::corpus::{Context, NumberMention};
use crate::derivations::{sign_class, AnswerType, Derivation, Label};
use crate::error::{Error, Result};
use crate::rules::Operation;
use crate::tensor::{log_sum_exp, Graph, ParamId, Tensor, Var};

/// Graph handles for one forward pass. Tables hold log-probabilities.
#[derive(Clone, Debug)]
pub struct Forward {
    pub hidden: Var,
    pub h_question: Var,
    pub h_passage: Var,
    /// `1 x 11`; a uniform constant under ablation.
    pub p_op: Var,
    pub log_p_op: Option<Var>,
    /// Executor outputs stacked as `11 x d_h`.
    pub executions: Option<Var>,
    pub h_op: Var,
    pub h_expected_op: Var,
    pub log_p_type: Var,
    pub question_start: Var,
    pub question_end: Var,
    pub passage_start: Option<Var>,
    pub passage_end: Option<Var>,
    pub count: Var,
    /// `N x 3`, absent when the instance has no numbers.
    pub signs: Option<Var>,
    /// `l x 3` over the joint sequence.
    pub bio: Var,
    pub q_range: Range<usize>,
    pub p_range: Range<usize>,
}

/// Plain values of a forward pass, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub p_op: Vec<f64>,
    pub p_type: Vec<f64>,
    pub log_p_type: Vec<f64>,
    /// Start/end log-probabilities indexed by position within the segment.
    pub question_start: Vec<f64>,
    pub question_end: Vec<f64>,
    pub passage_start: Vec<f64>,
    pub passage_end: Vec<f64>,
    pub count: Vec<f64>,
    pub signs: Vec<[f64; SIGN_CLASSES]>,
    pub bio: Vec<[f64; BIO_CLASSES]>,
    pub h_op: Vec<f64>,
    pub q_range: Range<usize>,
    pub p_range: Range<usize>,
}

fn triples(t: &Tensor) -> Vec<[f64; 3]> {
    t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl Forward {
    pub fn output(&self, g: &Graph) -> ForwardOutput {
        let vals = |v: Var| g.value(v).data().to_vec();
        let opt = |v: Option<Var>| v.map(vals).unwrap_or_default();
        let log_p_type = vals(self.log_p_type);
        ForwardOutput {
            p_op: vals(self.p_op),
            p_type: log_p_type.iter().map(|x| x.exp()).collect(),
            log_p_type,
            question_start: vals(self.question_start),
            question_end: vals(self.question_end),
            passage_start: opt(self.passage_start),
            passage_end: opt(self.passage_end),
            count: vals(self.count),
            signs: self.signs.map(|v| triples(g.value(v))).unwrap_or_default(),
            bio: triples(g.value(self.bio)),
            h_op: vals(self.h_op),
            q_range: self.q_range.clone(),
            p_range: self.p_range.clone(),
        }
    }
}

fn label_error(d: &Derivation, why: &str) -> Error {
    Error::Derivation(format!("{:?} derivation does not fit the forward pass: {why}", d.answer_type))
}

fn segment_offset(range: &Range<usize>, start: usize, end: usize) -> Option<(usize, usize)> {
    (range.contains(&start) && range.contains(&end) && start <= end).then(|| (start - range.start, end - range.start))
}

impl ForwardOutput {
    /// Label log-probability of one derivation, excluding the type term.
    fn label_log_prob(&self, d: &Derivation) -> Result<f64> {
        match (&d.label, d.answer_type) {
            (Label::Span { start, end }, AnswerType::QuestionSpan) => {
                let (s, e) = segment_offset(&self.q_range, *start, *end).ok_or_else(|| label_error(d, "span"))?;
                Ok(self.question_start[s] + self.question_end[e])
            }
            (Label::Span { start, end }, AnswerType::PassageSpan) => {
                let (s, e) = segment_offset(&self.p_range, *start, *end).ok_or_else(|| label_error(d, "span"))?;
                Ok(self.passage_start[s] + self.passage_end[e])
            }
            (Label::Count(k), AnswerType::Count) => {
                self.count.get(*k as usize).copied().ok_or_else(|| label_error(d, "count class"))
            }
            (Label::Signs(signs), AnswerType::ArithmeticExpression) => {
                if signs.len() != self.signs.len() {
                    return Err(label_error(d, "sign vector length"));
                }
                signs
                    .iter()
                    .zip(&self.signs)
                    .map(|(s, row)| sign_class(*s).map(|c| row[c]).ok_or_else(|| label_error(d, "sign")))
                    .sum()
            }
            (Label::Bio(tags), AnswerType::MultiSpans) => {
                if tags.len() != self.bio.len() {
                    return Err(label_error(d, "tag count"));
                }
                Ok(tags.iter().zip(&self.bio).map(|(t, row)| row[t.class()]).sum())
            }
            _ => Err(label_error(d, "label does not match type")),
        }
    }

    /// log Σ_d p(type_d) · p(label_d).
    pub fn marginal_log_likelihood(&self, derivations: &[Derivation]) -> Result<f64> {
        if derivations.is_empty() {
            return Err(Error::Derivation("empty derivation set".into()));
        }
        let terms = derivations
            .iter()
            .map(|d| Ok(self.log_p_type[d.answer_type.index()] + self.label_log_prob(d)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(log_sum_exp(&terms))
    }
}

/// Differentiable log Σ_d p(type_d) · p(label_d) over a derivation set.
pub fn marginal_log_likelihood(g: &mut Graph, fwd: &Forward, derivations: &[Derivation]) -> Result<Var> {
    if derivations.is_empty() {
        return Err(Error::Derivation("empty derivation set".into()));
    }
    let mut per_derivation = Vec::with_capacity(derivations.len());
    for d in derivations {
        let mut parts = vec![g.pick(fwd.log_p_type, &[d.answer_type.index()])?];
        match (&d.label, d.answer_type) {
            (Label::Span { start, end }, t @ (AnswerType::QuestionSpan | AnswerType::PassageSpan)) => {
                let (range, s_tab, e_tab) = if t == AnswerType::QuestionSpan {
                    (&fwd.q_range, Some(fwd.question_start), Some(fwd.question_end))
                } else {
                    (&fwd.p_range, fwd.passage_start, fwd.passage_end)
                };
                let (s, e) = segment_offset(range, *start, *end).ok_or_else(|| label_error(d, "span"))?;
                let (s_tab, e_tab) = s_tab.zip(e_tab).ok_or_else(|| label_error(d, "empty segment"))?;
                parts.push(g.pick(s_tab, &[s])?);
                parts.push(g.pick(e_tab, &[e])?);
            }
            (Label::Count(k), AnswerType::Count) => parts.push(g.pick(fwd.count, &[*k as usize])?),
            (Label::Signs(signs), AnswerType::ArithmeticExpression) => {
                let table = fwd.signs.ok_or_else(|| label_error(d, "no numbers"))?;
                if signs.len() != g.value(table).rows() {
                    return Err(label_error(d, "sign vector length"));
                }
                let idx = signs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| sign_class(*s).map(|c| i * SIGN_CLASSES + c).ok_or_else(|| label_error(d, "sign")))
                    .collect::<Result<Vec<_>>>()?;
                parts.push(g.pick(table, &idx)?);
            }
            (Label::Bio(tags), AnswerType::MultiSpans) => {
                if tags.len() != g.value(fwd.bio).rows() {
                    return Err(label_error(d, "tag count"));
                }
                let idx: Vec<usize> = tags.iter().enumerate().map(|(i, t)| i * BIO_CLASSES + t.class()).collect();
                parts.push(g.pick(fwd.bio, &idx)?);
            }
            _ => return Err(label_error(d, "label does not match type")),
        }
        let joined = g.concat_cols(&parts)?;
        per_derivation.push(g.sum(joined)?);
    }
    let all = g.concat_cols(&per_derivation)?;
    g.log_sum_exp(all)
}

impl Model {
    fn linear(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (wv, bv) = (g.param(w), g.param(b));
        let y = g.matmul(x, wv)?;
        let rows = g.value(y).rows();
        let bias = g.broadcast_rows(bv, rows)?;
        g.add(y, bias)
    }

    fn ffn(&self, g: &mut Graph, x: Var, f: &FfnIds) -> Result<Var> {
        let h = self.linear(g, x, f.w1, f.b1)?;
        let h = g.gelu(h)?;
        let (gain, bias) = (g.param(f.ln_gain), g.param(f.ln_bias));
        let h = g.layer_norm(h, gain, bias)?;
        self.linear(g, h, f.w2, f.b2)
    }

    /// `softmax(rows · scorer)ᵀ · rows`, a `1 x d_h` summary.
    pub fn pool(&self, g: &mut Graph, rows: Var, scorer: ParamId) -> Result<Var> {
        let w = g.param(scorer);
        let scores = g.matmul(rows, w)?;
        let scores = g.transpose(scores)?;
        let weights = g.softmax(scores)?;
        g.matmul(weights, rows)
    }

    /// Token + position embeddings followed by the post-norm transformer layers.
    pub fn encode(&self, g: &mut Graph, ctx: &Context) -> Result<Var> {
        let cfg = &self.config;
        let l = ctx.len();
        if l > cfg.max_seq_len {
            return Err(Error::Context(format!("sequence length {l} exceeds max_seq_len {}", cfg.max_seq_len)));
        }
        let ids: Vec<usize> = ctx.joint_ids.iter().map(|&i| i as usize).collect();
        let tok = g.param(self.ids.token_embedding);
        let tok = g.embedding_lookup(tok, &ids)?;
        let pos = g.param(self.ids.position_embedding);
        let positions: Vec<usize> = (0..l).collect();
        let pos = g.embedding_lookup(pos, &positions)?;
        let mut h = g.add(tok, pos)?;

        let d = cfg.d_h;
        let dk = d / cfg.n_h;
        let scale = 1.0 / (dk as f64).sqrt();
        for layer in &self.ids.layers {
            let q = self.linear(g, h, layer.wq, layer.bq)?;
            let k = self.linear(g, h, layer.wk, layer.bk)?;
            let v = self.linear(g, h, layer.wv, layer.bv)?;
            let mut heads = Vec::with_capacity(cfg.n_h);
            for c in 0..cfg.n_h {
                let cols = c * dk..(c + 1) * dk;
                let qc = g.slice_cols(q, cols.start, cols.end)?;
                let kc = g.slice_cols(k, cols.start, cols.end)?;
                let vc = g.slice_cols(v, cols.start, cols.end)?;
                let kt = g.transpose(kc)?;
                let scores = g.matmul(qc, kt)?;
                let scores = g.scale(scores, scale)?;
                let attn = g.softmax(scores)?;
                heads.push(g.matmul(attn, vc)?);
            }
            let joined = g.concat_cols(&heads)?;
            let attended = self.linear(g, joined, layer.wo, layer.bo)?;
            let res = g.add(h, attended)?;
            let (lg, lb) = (g.param(layer.ln1_gain), g.param(layer.ln1_bias));
            h = g.layer_norm(res, lg, lb)?;

            let f = self.linear(g, h, layer.w1, layer.b1)?;
            let f = g.gelu(f)?;
            let f = self.linear(g, f, layer.w2, layer.b2)?;
            let res = g.add(h, f)?;
            let (lg, lb) = (g.param(layer.ln2_gain), g.param(layer.ln2_bias));
            h = g.layer_norm(res, lg, lb)?;
        }
        Ok(h)
    }

    /// Log-probabilities over operations from the pooled question, `1 x 11`.
    pub fn select_operations(&self, g: &mut Graph, h_question: Var) -> Result<Var> {
        let w = g.param(self.ids.selector);
        let e = g.param(self.ids.op_embedding);
        let hq = g.transpose(h_question)?;
        let wq = g.matmul(w, hq)?;
        let logits = g.matmul(e, wq)?;
        let logits = g.transpose(logits)?;
        g.log_softmax(logits)
    }

    /// Multi-head cross-attention with the operation embedding as the query, `1 x d_h`.
    pub fn execute_operation(&self, g: &mut Graph, op: Operation, hidden: Var) -> Result<Var> {
        let cfg = &self.config;
        let dk = cfg.d_h / cfg.n_h;
        let scale = 1.0 / (dk as f64).sqrt();
        let ex = &self.ids.executors[op.index()];
        let table = g.param(self.ids.op_embedding);
        let e = g.slice_rows(table, op.index(), op.index() + 1)?;
        let (wq, wk, wv) = (g.param(ex.wq), g.param(ex.wk), g.param(ex.wv));
        let query = g.matmul(e, wq)?;
        let mut heads = Vec::with_capacity(cfg.n_h);
        for c in 0..cfg.n_h {
            let (lo, hi) = (c * dk, (c + 1) * dk);
            // (H·Wk_c)·q_cᵀ computed as H·(Wk_c·q_cᵀ); likewise (α·H)·Wv_c.
            let qc = g.slice_cols(query, lo, hi)?;
            let qc = g.transpose(qc)?;
            let wkc = g.slice_cols(wk, lo, hi)?;
            let probe = g.matmul(wkc, qc)?;
            let scores = g.matmul(hidden, probe)?;
            let scores = g.transpose(scores)?;
            let scores = g.scale(scores, scale)?;
            let alpha = g.softmax(scores)?;
            let summary = g.matmul(alpha, hidden)?;
            let wvc = g.slice_cols(wv, lo, hi)?;
            heads.push(g.matmul(summary, wvc)?);
        }
        g.concat_cols(&heads)
    }

    /// Full forward pass over a context and its number mentions.
    pub fn forward(&self, g: &mut Graph, ctx: &Context, numbers: &[NumberMention]) -> Result<Forward> {
        let cfg = &self.config;
        if ctx.q_range.is_empty() {
            return Err(Error::Context("empty question segment".into()));
        }
        let d = cfg.d_h;
        let l = ctx.len();
        let hidden = self.encode(g, ctx)?;
        let hq_rows = g.slice_rows(hidden, ctx.q_range.start, ctx.q_range.end)?;
        let h_question = self.pool(g, hq_rows, self.ids.question_pool)?;
        let h_passage = if ctx.p_range.is_empty() {
            g.constant(Tensor::zeros(&[1, d]))
        } else {
            let rows = g.slice_rows(hidden, ctx.p_range.start, ctx.p_range.end)?;
            self.pool(g, rows, self.ids.passage_pool)?
        };

        let (p_op, log_p_op, executions, h_op, h_expected_op) = if cfg.ablate_op {
            let uniform = g.constant(Tensor::filled(&[1, cfg.n_ops], 1.0 / cfg.n_ops as f64));
            let zero_op = g.constant(Tensor::zeros(&[1, d]));
            let zero_e = g.constant(Tensor::zeros(&[1, d]));
            (uniform, None, None, zero_op, zero_e)
        } else {
            let log_p_op = self.select_operations(g, h_question)?;
            let p_op = g.softmax(log_p_op)?;
            let mut outs = Vec::with_capacity(cfg.n_ops);
            for op in Operation::ALL {
                outs.push(self.execute_operation(g, op, hidden)?);
            }
            let executions = g.concat_rows(&outs)?;
            let h_op = mix(g, p_op, executions)?;
            let table = g.param(self.ids.op_embedding);
            let h_e = g.matmul(p_op, table)?;
            (p_op, Some(log_p_op), Some(executions), h_op, h_e)
        };

        let type_in = g.concat_cols(&[h_expected_op, h_question, h_passage])?;
        let type_logits = self.ffn(g, type_in, &self.ids.type_head)?;
        let log_p_type = g.log_softmax(type_logits)?;

        let span_q = self.pool(g, hq_rows, self.ids.span_query_pool)?;
        let span_q = g.broadcast_rows(span_q, l)?;
        let gated = g.mul(hidden, span_q)?;
        let op_rows = g.broadcast_rows(h_op, l)?;
        let span_in = g.concat_cols(&[op_rows, hidden, gated])?;
        let span_logits = self.ffn(g, span_in, &self.ids.span_head)?;
        let segment_tables = |g: &mut Graph, range: &Range<usize>| -> Result<(Var, Var)> {
            let rows = g.slice_rows(span_logits, range.start, range.end)?;
            let mut out = [None, None];
            for (col, slot) in out.iter_mut().enumerate() {
                let c = g.slice_cols(rows, col, col + 1)?;
                let c = g.transpose(c)?;
                *slot = Some(g.log_softmax(c)?);
            }
            Ok((out[0].unwrap(), out[1].unwrap()))
        };
        let (question_start, question_end) = segment_tables(g, &ctx.q_range)?;
        let (passage_start, passage_end) = if ctx.p_range.is_empty() {
            (None, None)
        } else {
            let (s, e) = segment_tables(g, &ctx.p_range)?;
            (Some(s), Some(e))
        };

        let positions = numbers
            .iter()
            .map(|n| {
                ctx.joint_index(n.source, n.token_index).ok_or_else(|| {
                    Error::Context(format!("number at {:?} token {} is outside the context", n.source, n.token_index))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        let (h_numbers, number_rows) = if positions.is_empty() {
            (g.constant(Tensor::zeros(&[1, d])), None)
        } else {
            let u = g.embedding_lookup(hidden, &positions)?;
            (self.pool(g, u, self.ids.number_pool)?, Some(u))
        };
        let count_in = g.concat_cols(&[h_op, h_numbers, h_question, h_passage])?;
        let count_logits = self.ffn(g, count_in, &self.ids.count_head)?;
        let count = g.log_softmax(count_logits)?;

        let signs = match number_rows {
            None => None,
            Some(u) => {
                let n = positions.len();
                let a = g.broadcast_rows(h_op, n)?;
                let b = g.broadcast_rows(h_question, n)?;
                let c = g.broadcast_rows(h_passage, n)?;
                let sign_in = g.concat_cols(&[a, u, b, c])?;
                let logits = self.ffn(g, sign_in, &self.ids.sign_head)?;
                Some(g.log_softmax(logits)?)
            }
        };

        let bio_in = g.concat_cols(&[hidden, op_rows])?;
        let bio_logits = self.ffn(g, bio_in, &self.ids.bio_head)?;
        let bio = g.log_softmax(bio_logits)?;

        Ok(Forward {
            hidden,
            h_question,
            h_passage,
            p_op,
            log_p_op,
            executions,
            h_op,
            h_expected_op,
            log_p_type,
            question_start,
            question_end,
            passage_start,
            passage_end,
            count,
            signs,
            bio,
            q_range: ctx.q_range.clone(),
            p_range: ctx.p_range.clone(),
        })
    }

    /// Inference-only forward pass returning plain values.
    pub fn predict_output(&self, ctx: &Context, numbers: &[NumberMention]) -> Result<ForwardOutput> {
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, ctx, numbers)?;
        Ok(fwd.output(&g))
    }
}

/// Soft mixture of executor outputs, `p_op (1 x 11) · executions (11 x d_h)`.
pub fn mix(g: &mut Graph, p_op: Var, executions: Var) -> Result<Var> {
    g.matmul(p_op, executions)
}
