//! The operation-pivoted reasoning network: a small transformer encoder, an
//! operation selector, one cross-attention executor per operation, and the
//! answer-type and label heads.

mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::derivations::AnswerType;
use crate::error::{Error, Result};
use crate::rules::Operation;
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tensor};

pub use forward::{marginal_log_likelihood, mix, Forward, ForwardOutput};

pub const COUNT_CLASSES: usize = 10;
pub const SIGN_CLASSES: usize = 3;
pub const BIO_CLASSES: usize = 3;

const EMBEDDING_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_h: usize,
    pub n_h: usize,
    pub n_ops: usize,
    pub n_types: usize,
    pub count_classes: usize,
    pub vocab_size: usize,
    pub encoder_layers: usize,
    pub max_seq_len: usize,
    pub lambda_op: f64,
    /// Removes the whole operation path (selector, executors, mixtures).
    pub ablate_op: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_h: 64,
            n_h: 4,
            n_ops: Operation::COUNT,
            n_types: AnswerType::COUNT,
            count_classes: COUNT_CLASSES,
            vocab_size: 4,
            encoder_layers: 2,
            max_seq_len: 128,
            lambda_op: 0.3,
            ablate_op: false,
            seed: 13,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_h == 0 || self.n_h == 0 || self.d_h % self.n_h != 0 {
            return bad(format!("d_h {} must be a positive multiple of n_h {}", self.d_h, self.n_h));
        }
        if self.n_ops != Operation::COUNT || self.n_types != AnswerType::COUNT || self.count_classes != COUNT_CLASSES {
            return bad(format!(
                "n_ops, n_types and count_classes are fixed at {}, {}, {}",
                Operation::COUNT,
                AnswerType::COUNT,
                COUNT_CLASSES
            ));
        }
        if !(self.lambda_op >= 0.0 && self.lambda_op.is_finite()) {
            return bad(format!("lambda_op must be finite and >= 0, got {}", self.lambda_op));
        }
        if self.max_seq_len < crate::corpus::SEPARATORS + 1 {
            return bad(format!("max_seq_len {} is too small", self.max_seq_len));
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must include the four special tokens".into());
        }
        Ok(())
    }

    /// Lambda actually applied to the operation loss (zero under ablation).
    pub fn effective_lambda(&self) -> f64 {
        if self.ablate_op {
            0.0
        } else {
            self.lambda_op
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

/// Linear -> GELU -> LayerNorm -> Linear.
#[derive(Clone, Debug)]
pub(crate) struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct ExecutorIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamIds {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub layers: Vec<LayerIds>,
    pub op_embedding: ParamId,
    pub executors: Vec<ExecutorIds>,
    pub selector: ParamId,
    pub question_pool: ParamId,
    pub passage_pool: ParamId,
    pub span_query_pool: ParamId,
    pub number_pool: ParamId,
    pub type_head: FfnIds,
    pub span_head: FfnIds,
    pub count_head: FfnIds,
    pub sign_head: FfnIds,
    pub bio_head: FfnIds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum InitKind {
    /// uniform(-1/sqrt(d_h), 1/sqrt(d_h))
    Matrix,
    /// normal(0, 0.02)
    Embedding,
    Zeros,
    Ones,
}

type Maker<'a> = dyn FnMut(&str, [usize; 2], InitKind, ParamGroup) -> Result<Tensor> + 'a;

struct Builder<'a, 'm> {
    store: ParamStore,
    make: &'a mut Maker<'m>,
    d_h: usize,
}

impl Builder<'_, '_> {
    fn add(&mut self, name: &str, shape: [usize; 2], kind: InitKind, group: ParamGroup) -> Result<ParamId> {
        let t = (self.make)(name, shape, kind, group)?;
        self.store.add(name, t, group)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, [rows, cols], InitKind::Matrix, group)
    }

    fn embedding(&mut self, name: &str, rows: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, [rows, self.d_h], InitKind::Embedding, group)
    }

    fn bias(&mut self, name: &str, cols: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, [1, cols], InitKind::Zeros, group)
    }

    fn gain(&mut self, name: &str, cols: usize, group: ParamGroup) -> Result<ParamId> {
        self.add(name, [1, cols], InitKind::Ones, group)
    }

    fn ffn(&mut self, name: &str, input: usize, output: usize) -> Result<FfnIds> {
        let (d, g) = (self.d_h, ParamGroup::Head);
        Ok(FfnIds {
            w1: self.matrix(&format!("{name}.w1"), input, d, g)?,
            b1: self.bias(&format!("{name}.b1"), d, g)?,
            ln_gain: self.gain(&format!("{name}.ln.gain"), d, g)?,
            ln_bias: self.bias(&format!("{name}.ln.bias"), d, g)?,
            w2: self.matrix(&format!("{name}.w2"), d, output, g)?,
            b2: self.bias(&format!("{name}.b2"), output, g)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub(crate) ids: ParamIds,
}

impl Model {
    /// Freshly initialized parameters, deterministic in `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, EMBEDDING_STD).expect("valid std");
        let bound = 1.0 / (config.d_h as f64).sqrt();
        let mut make = |_: &str, [r, c]: [usize; 2], kind: InitKind, _: ParamGroup| {
            let data = match kind {
                InitKind::Matrix => (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect(),
                InitKind::Embedding => (0..r * c).map(|_| normal.sample(&mut rng)).collect(),
                InitKind::Zeros => vec![0.0; r * c],
                InitKind::Ones => vec![1.0; r * c],
            };
            Tensor::new(vec![r, c], data)
        };
        Self::build(config, &mut make)
    }

    /// Rebuilds a model from named tensors; every parameter must be present
    /// exactly once with the shape the config implies.
    pub fn from_values(config: ModelConfig, values: Vec<(String, Tensor)>) -> Result<Model> {
        config.validate()?;
        let mut by_name: std::collections::HashMap<String, Tensor> = std::collections::HashMap::new();
        for (name, t) in values {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("parameter {name} appears twice")));
            }
        }
        let mut make = |name: &str, [r, c]: [usize; 2], _: InitKind, _: ParamGroup| {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != [r, c] {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    [r, c]
                )));
            }
            Ok(t)
        };
        let model = Self::build(config, &mut make)?;
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Checkpoint(format!("unknown parameter {extra}")));
        }
        Ok(model)
    }

    fn build(config: ModelConfig, make: &mut Maker<'_>) -> Result<Model> {
        let d = config.d_h;
        let mut init = Builder {
            store: ParamStore::new(),
            make,
            d_h: d,
        };
        let enc = ParamGroup::Encoder;
        let head = ParamGroup::Head;

        let token_embedding = init.embedding("encoder.token_embedding", config.vocab_size, enc)?;
        let position_embedding = init.embedding("encoder.position_embedding", config.max_seq_len, enc)?;
        let mut layers = Vec::with_capacity(config.encoder_layers);
        for i in 0..config.encoder_layers {
            let p = format!("encoder.layer{i}");
            layers.push(LayerIds {
                wq: init.matrix(&format!("{p}.attn.wq"), d, d, enc)?,
                bq: init.bias(&format!("{p}.attn.bq"), d, enc)?,
                wk: init.matrix(&format!("{p}.attn.wk"), d, d, enc)?,
                bk: init.bias(&format!("{p}.attn.bk"), d, enc)?,
                wv: init.matrix(&format!("{p}.attn.wv"), d, d, enc)?,
                bv: init.bias(&format!("{p}.attn.bv"), d, enc)?,
                wo: init.matrix(&format!("{p}.attn.wo"), d, d, enc)?,
                bo: init.bias(&format!("{p}.attn.bo"), d, enc)?,
                ln1_gain: init.gain(&format!("{p}.ln1.gain"), d, enc)?,
                ln1_bias: init.bias(&format!("{p}.ln1.bias"), d, enc)?,
                w1: init.matrix(&format!("{p}.ffn.w1"), d, 2 * d, enc)?,
                b1: init.bias(&format!("{p}.ffn.b1"), 2 * d, enc)?,
                w2: init.matrix(&format!("{p}.ffn.w2"), 2 * d, d, enc)?,
                b2: init.bias(&format!("{p}.ffn.b2"), d, enc)?,
                ln2_gain: init.gain(&format!("{p}.ln2.gain"), d, enc)?,
                ln2_bias: init.bias(&format!("{p}.ln2.bias"), d, enc)?,
            });
        }

        let op_embedding = init.matrix("operations.embedding", config.n_ops, d, head)?;
        let mut executors = Vec::with_capacity(config.n_ops);
        for op in Operation::ALL {
            let p = format!("operations.{}", op.tag().to_lowercase());
            executors.push(ExecutorIds {
                wq: init.matrix(&format!("{p}.wq"), d, d, head)?,
                wk: init.matrix(&format!("{p}.wk"), d, d, head)?,
                wv: init.matrix(&format!("{p}.wv"), d, d, head)?,
            });
        }
        let selector = init.matrix("selector.bilinear", d, d, head)?;
        let question_pool = init.matrix("pool.question", d, 1, head)?;
        let passage_pool = init.matrix("pool.passage", d, 1, head)?;
        let span_query_pool = init.matrix("pool.span_question", d, 1, head)?;
        let number_pool = init.matrix("pool.number", d, 1, head)?;

        let type_head = init.ffn("head.type", 3 * d, config.n_types)?;
        let span_head = init.ffn("head.span", 3 * d, 2)?;
        let count_head = init.ffn("head.count", 4 * d, config.count_classes)?;
        let sign_head = init.ffn("head.sign", 4 * d, SIGN_CLASSES)?;
        let bio_head = init.ffn("head.bio", 2 * d, BIO_CLASSES)?;

        let ids = ParamIds {
            token_embedding,
            position_embedding,
            layers,
            op_embedding,
            executors,
            selector,
            question_pool,
            passage_pool,
            span_query_pool,
            number_pool,
            type_head,
            span_head,
            count_head,
            sign_head,
            bio_head,
        };
        Ok(Model {
            config,
            params: init.store,
            ids,
        })
    }

    /// Parameters owned by the operation path: embeddings, executors and selector.
    pub fn operation_bank(&self) -> Vec<ParamId> {
        let mut out = vec![self.ids.op_embedding, self.ids.selector];
        for e in &self.ids.executors {
            out.extend([e.wq, e.wk, e.wv]);
        }
        out
    }

    /// Overwrites every operation-path parameter with fresh random values.
    pub fn randomize_operation_bank(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in self.operation_bank() {
            for v in self.params.get_mut(id).value.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_h: 8,
            n_h: 2,
            vocab_size: 20,
            max_seq_len: 16,
            encoder_layers: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn config_rejects_bad_heads() {
        let cfg = ModelConfig { d_h: 10, n_h: 4, ..small() };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig { lambda_op: -0.1, ..small() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = Model::new(small()).unwrap();
        let b = Model::new(small()).unwrap();
        assert_eq!(a.params, b.params);
        let id = a.params.id("head.count.w2").unwrap();
        assert_eq!(a.params.get(id).value.shape(), &[8, 10]);
        let bound = 1.0 / 8f64.sqrt();
        assert!(a.params.get(id).value.data().iter().all(|v| v.abs() <= bound));
        let ln = a.params.id("head.bio.ln.gain").unwrap();
        assert!(a.params.get(ln).value.data().iter().all(|&v| v == 1.0));
        assert_eq!(a.params.get(a.ids.op_embedding).group, ParamGroup::Head);
        assert_eq!(a.params.get(a.ids.token_embedding).group, ParamGroup::Encoder);
    }
}
