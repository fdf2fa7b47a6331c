//! Joint optimization of the answer and operation losses, plus checkpoints.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Vocab};
use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::eval::{decode, em_f1_max, DecodeOptions, DEFAULT_MAX_SPAN_LEN};
use crate::model::{marginal_log_likelihood, Forward, Model, ModelConfig};
use crate::synth::gradcheck_instance;
use crate::tensor::{gradcheck, GradcheckOptions, GradcheckReport, Graph, ParamGroup, ParamStore, Tensor, Var};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Large,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "large" => Ok(Profile::Large),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or large)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_op: f64,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub encoder_wd: f64,
    pub head_wd: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Minimum token frequency for the vocabulary.
    pub min_count: usize,
    pub max_span_len: usize,
    /// Architecture; `vocab_size`, `lambda_op` and `seed` are filled in at training time.
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::profile(Profile::Desk)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn profile(profile: Profile) -> TrainConfig {
        match profile {
            Profile::Desk => TrainConfig {
                lambda_op: 0.3,
                encoder_lr: 1e-3,
                head_lr: 3e-3,
                encoder_wd: 0.01,
                head_wd: 5e-5,
                epochs: 30,
                batch_size: 16,
                warmup_fraction: 0.06,
                seed: 13,
                min_count: crate::dataset::DEFAULT_MIN_COUNT,
                max_span_len: DEFAULT_MAX_SPAN_LEN,
                model: ModelConfig::default(),
            },
            // Large-encoder settings, kept for reference; far beyond desk scale.
            Profile::Large => TrainConfig {
                lambda_op: 0.3,
                encoder_lr: 1.5e-5,
                head_lr: 5e-4,
                encoder_wd: 0.01,
                head_wd: 5e-5,
                epochs: 12,
                batch_size: 16,
                warmup_fraction: 0.06,
                seed: 13,
                min_count: crate::dataset::DEFAULT_MIN_COUNT,
                max_span_len: DEFAULT_MAX_SPAN_LEN,
                model: ModelConfig {
                    d_h: 1024,
                    n_h: 16,
                    max_seq_len: 512,
                    ..ModelConfig::default()
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("encoder_lr", self.encoder_lr),
            ("head_lr", self.head_lr),
            ("encoder_wd", self.encoder_wd),
            ("head_wd", self.head_wd),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda_op >= 0.0 && self.lambda_op.is_finite()) {
            return Err(Error::Config(format!("lambda_op must be >= 0, got {}", self.lambda_op)));
        }
        let mut m = self.model.clone();
        m.lambda_op = self.lambda_op;
        m.validate()
    }

    /// Sets one `key = value` entry; keys are the field names of this struct
    /// and of the model architecture.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let m = &mut self.model;
        match key {
            "lambda_op" => self.lambda_op = parse_value(key, value, line)?,
            "encoder_lr" => self.encoder_lr = parse_value(key, value, line)?,
            "head_lr" => self.head_lr = parse_value(key, value, line)?,
            "encoder_wd" => self.encoder_wd = parse_value(key, value, line)?,
            "head_wd" => self.head_wd = parse_value(key, value, line)?,
            "epochs" => self.epochs = parse_value(key, value, line)?,
            "batch_size" => self.batch_size = parse_value(key, value, line)?,
            "warmup_fraction" => self.warmup_fraction = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "min_count" => self.min_count = parse_value(key, value, line)?,
            "max_span_len" => self.max_span_len = parse_value(key, value, line)?,
            "d_h" => m.d_h = parse_value(key, value, line)?,
            "n_h" => m.n_h = parse_value(key, value, line)?,
            "n_ops" => m.n_ops = parse_value(key, value, line)?,
            "n_types" => m.n_types = parse_value(key, value, line)?,
            "count_classes" => m.count_classes = parse_value(key, value, line)?,
            "encoder_layers" => m.encoder_layers = parse_value(key, value, line)?,
            "max_seq_len" => m.max_seq_len = parse_value(key, value, line)?,
            "ablate_op" => m.ablate_op = parse_value(key, value, line)?,
            "vocab_size" => {
                return Err(Error::Config(format!(
                    "line {line}: vocab_size is derived from the training data"
                )))
            }
            other => return Err(Error::Config(format!("line {line}: unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim(), i + 1)?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
        TrainConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        format!(
            "lambda_op = {}\nencoder_lr = {}\nhead_lr = {}\nencoder_wd = {}\nhead_wd = {}\nepochs = {}\n\
             batch_size = {}\nwarmup_fraction = {}\nseed = {}\nmin_count = {}\nmax_span_len = {}\n\
             d_h = {}\nn_h = {}\nencoder_layers = {}\nmax_seq_len = {}\nablate_op = {}\n",
            self.lambda_op,
            self.encoder_lr,
            self.head_lr,
            self.encoder_wd,
            self.head_wd,
            self.epochs,
            self.batch_size,
            self.warmup_fraction,
            self.seed,
            self.min_count,
            self.max_span_len,
            m.d_h,
            m.n_h,
            m.encoder_layers,
            m.max_seq_len,
            m.ablate_op
        )
    }

    /// Model configuration for a given vocabulary.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            lambda_op: self.lambda_op,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_span_len: self.max_span_len,
        }
    }
}

/// Linear warmup to `base_lr`, then cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = (warmup_fraction * total_steps as f64).round() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let decay = total_steps - warmup;
    if decay == 0 {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / decay as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Graph handle of the total loss plus the values of both parts.
#[derive(Clone, Copy, Debug)]
pub struct Loss {
    pub total: Var,
    pub answer: f64,
    pub operation: f64,
}

/// `L = L_a + λ·L_op` with `L_a = -log p(A|Q,P)` and `L_op = -Σ_{o∈O} log p(o)`.
pub fn compute_loss(g: &mut Graph, fwd: &Forward, inst: &Instance, lambda: f64) -> Result<Loss> {
    if inst.derivations.is_empty() {
        return Err(Error::Derivation(format!("instance {} has no derivations", inst.id)));
    }
    let ll = marginal_log_likelihood(g, fwd, &inst.derivations.derivations)?;
    let answer_loss = g.scale(ll, -1.0)?;
    let answer = g.scalar(answer_loss);
    let mut total = answer_loss;
    let mut operation = 0.0;
    if let (Some(log_p_op), false) = (fwd.log_p_op, inst.operations.is_empty()) {
        let idx: Vec<usize> = inst.operations.iter().map(|o| o.index()).collect();
        if lambda > 0.0 {
            let picked = g.pick(log_p_op, &idx)?;
            let s = g.sum(picked)?;
            let op_loss = g.scale(s, -1.0)?;
            operation = g.scalar(op_loss);
            let weighted = g.scale(op_loss, lambda)?;
            total = g.add(answer_loss, weighted)?;
        } else {
            let v = g.value(log_p_op);
            operation = -idx.iter().map(|&i| v.data()[i]).sum::<f64>();
        }
    }
    Ok(Loss {
        total,
        answer,
        operation,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        OptimizerState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// Learning rate and decoupled weight decay for one parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRate {
    pub lr: f64,
    pub weight_decay: f64,
}

/// Adam with bias correction and decoupled weight decay. Returns `false` and
/// leaves parameters untouched when any gradient is non-finite. Gradients are
/// zeroed either way.
pub fn adam_step(params: &mut ParamStore, state: &mut OptimizerState, encoder: GroupRate, head: GroupRate) -> bool {
    let finite = params.iter().all(|(_, p)| p.grad.is_finite());
    if !finite {
        params.zero_grad();
        return false;
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - BETA1.powf(t);
    let c2 = 1.0 - BETA2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        let rate = match p.group {
            ParamGroup::Encoder => encoder,
            ParamGroup::Head => head,
        };
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let grad = p.grad.data();
        for (j, w) in p.value.data_mut().iter_mut().enumerate() {
            let gj = grad[j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= rate.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + rate.weight_decay * *w);
        }
    }
    params.zero_grad();
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub loss_a: f64,
    pub loss_op: f64,
    /// Exact match of the predictions made during the epoch's own forward passes.
    pub train_em: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,loss,loss_a,loss_op,train_em\n");
    for m in metrics {
        s.push_str(&format!("{},{},{},{},{}\n", m.epoch, m.loss, m.loss_a, m.loss_op, m.train_em));
    }
    s
}

/// RNG position, enough to resume the shuffling stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocab,
    pub optimizer: Option<OptimizerState>,
    pub rng: RngState,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub skipped_batches: usize,
}

impl fmt::Debug for TrainOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrainOutcome")
            .field("metrics", &self.metrics)
            .field("skipped_batches", &self.skipped_batches)
            .finish_non_exhaustive()
    }
}

pub fn train(instances: &[Instance], vocab: &Vocab, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(instances, vocab, config, |_| {})
}

/// Sequence budget for the gradient-check instance.
pub const GRADCHECK_MAX_SEQ_LEN: usize = 24;

/// Finite-difference check of the full training loss (all five answer heads
/// plus the weighted operation term) on a small hand-labeled instance.
pub fn gradcheck_joint_loss(config: ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let text = "How many yards was the longest field goal? Bears kicked 29 and 80 yards.";
    let tokens = tokenize(text);
    let vocab = Vocab::build(&tokens, 1);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: GRADCHECK_MAX_SEQ_LEN,
        ..config
    };
    let inst = gradcheck_instance(&vocab, config.max_seq_len)?;
    let lambda = config.effective_lambda();
    let mut model = Model::new(config)?;
    // The closure needs the model's structure while gradcheck perturbs its values.
    let mut store = std::mem::take(&mut model.params);
    let model = model;
    gradcheck(
        &mut store,
        |g| {
            let fwd = model.forward(g, &inst.context, &inst.numbers)?;
            Ok(compute_loss(g, &fwd, &inst, lambda)?.total)
        },
        opts,
    )
}

/// Trains on the usable instances; `on_epoch` sees each epoch's metrics.
pub fn train_with(
    instances: &[Instance],
    vocab: &Vocab,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let usable: Vec<&Instance> = instances.iter().filter(|i| i.usable()).collect();
    if usable.is_empty() {
        return Err(Error::Data("no usable training instances after filtering".into()));
    }
    let mut model = Model::new(config.model_config(vocab.len()))?;
    let lambda = model.config.effective_lambda();
    let mut state = OptimizerState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let decode_opts = config.decode_options();

    let batches_per_epoch = usable.len().div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut skipped = 0;
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut sum_l, mut sum_a, mut sum_op, mut sum_em) = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let inst = usable[i];
                let mut g = Graph::new(&model.params);
                let fwd = model.forward(&mut g, &inst.context, &inst.numbers)?;
                let loss = compute_loss(&mut g, &fwd, inst, lambda)?;
                sum_l += g.scalar(loss.total);
                sum_a += loss.answer;
                sum_op += loss.operation;
                let pred = decode(&inst.id, &fwd.output(&g), &inst.context, &inst.numbers, &decode_opts);
                sum_em += em_f1_max(&pred.answers, &inst.gold_alternates()).0;
                let grads = match g.backward(loss.total) {
                    Ok(grads) => grads,
                    Err(Error::NonFinite { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                model.params.accumulate(&grads, scale);
            }
            step += 1;
            let enc = GroupRate {
                lr: lr_at(step, total_steps, config.encoder_lr, config.warmup_fraction),
                weight_decay: config.encoder_wd,
            };
            let head = GroupRate {
                lr: lr_at(step, total_steps, config.head_lr, config.warmup_fraction),
                weight_decay: config.head_wd,
            };
            if !adam_step(&mut model.params, &mut state, enc, head) {
                skipped += 1;
            }
        }
        let n = usable.len() as f64;
        let m = EpochMetrics {
            epoch,
            loss: sum_l / n,
            loss_a: sum_a / n,
            loss_op: sum_op / n,
            train_em: sum_em / n,
        };
        on_epoch(&m);
        metrics.push(m);
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            vocab: vocab.clone(),
            optimizer: Some(state),
            rng: RngState {
                seed: config.seed,
                word_pos: rng.get_word_pos(),
            },
        },
        metrics,
        skipped_batches: skipped,
    })
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OPRA";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }

    /// `count` little-endian f64 values, checked against the remaining length first.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Untrained checkpoint: fresh parameters, no optimizer state.
    pub fn initial(config: ModelConfig, vocab: Vocab) -> Result<Checkpoint> {
        let seed = config.seed;
        Ok(Checkpoint {
            model: Model::new(config)?,
            vocab,
            optimizer: None,
            rng: RngState { seed, word_pos: 0 },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let cfg = serde_json::to_string(&self.model.config).expect("config serializes");
        put_str(&mut out, &cfg);
        put_u32(&mut out, self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            put_str(&mut out, t);
        }
        put_u32(&mut out, self.model.params.len() as u32);
        for (_, p) in self.model.params.iter() {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, p.value.data());
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                for (m, v) in state.first_moment.iter().zip(&state.second_moment) {
                    put_f64s(&mut out, m.data());
                    put_f64s(&mut out, v.data());
                }
            }
        }
        out.extend_from_slice(&self.rng.seed.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is incompatible with supported version {CHECKPOINT_VERSION}"
            )));
        }
        let config: ModelConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        config.validate()?;
        let n_vocab = r.u32()? as usize;
        let mut tokens = Vec::new();
        for _ in 0..n_vocab {
            tokens.push(r.string()?);
        }
        let vocab = Vocab::from_tokens(tokens).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocab has {} entries but the config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let n_params = r.u32()? as usize;
        let mut values = Vec::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("parameter {name} has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
            let data = r.f64s(count)?;
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter {name} holds non-finite values")));
            }
            values.push((name, Tensor::new(shape, data)?));
        }
        let model = Model::from_values(config, values)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let mut first_moment = Vec::with_capacity(model.params.len());
                let mut second_moment = Vec::with_capacity(model.params.len());
                for (_, p) in model.params.iter() {
                    let shape = p.value.shape().to_vec();
                    first_moment.push(Tensor::new(shape.clone(), r.f64s(p.value.len())?)?);
                    second_moment.push(Tensor::new(shape, r.f64s(p.value.len())?)?);
                }
                Some(OptimizerState {
                    step,
                    first_moment,
                    second_moment,
                })
            }
            flag => return Err(Error::Checkpoint(format!("invalid optimizer flag {flag}"))),
        };
        let rng = RngState {
            seed: r.u64()?,
            word_pos: r.u128()?,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            model,
            vocab,
            optimizer,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display(), e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(0, 100, 1e-3, 0.06), 0.0);
        assert!((lr_at(6, 100, 1e-3, 0.06) - 1e-3).abs() < 1e-15);
        assert!(lr_at(100, 100, 1e-3, 0.06).abs() < 1e-12);
        assert!((lr_at(3, 100, 1e-3, 0.06) - 5e-4).abs() < 1e-15);
        assert_eq!(lr_at(0, 10, 1.0, 0.0), 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0), ParamGroup::Head).unwrap();
        let mut state = OptimizerState::new(&store);
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let rate = GroupRate { lr: 0.01, weight_decay: 0.0 };
        assert!(adam_step(&mut store, &mut state, rate, rate));
        let w = store.get(id).value.data()[0];
        assert!((1.0 - w - 0.01).abs() < 1e-9, "{w}");
        assert_eq!(store.get(id).grad.data(), &[0.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_grad_without_decay_is_identity() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.3), ParamGroup::Encoder).unwrap();
        let mut state = OptimizerState::new(&store);
        let rate = GroupRate { lr: 0.01, weight_decay: 0.0 };
        adam_step(&mut store, &mut state, rate, rate);
        assert_eq!(store.get(id).value.data()[0].to_bits(), 0.3f64.to_bits());
        let decay = GroupRate { lr: 0.1, weight_decay: 0.5 };
        adam_step(&mut store, &mut state, decay, decay);
        assert!((store.get(id).value.data()[0] - 0.3 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grads_skip() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.3), ParamGroup::Head).unwrap();
        let mut state = OptimizerState::new(&store);
        store.get_mut(id).grad = Tensor::scalar(f64::NAN);
        let rate = GroupRate { lr: 0.01, weight_decay: 0.0 };
        assert!(!adam_step(&mut store, &mut state, rate, rate));
        assert_eq!(store.get(id).value.data()[0], 0.3);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 3;
        cfg.model.d_h = 32;
        let parsed = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn config_rejects_unknown_and_bad_values() {
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("epochs = many").is_err());
        assert!(TrainConfig::parse("head_lr = 0").is_err());
        assert!(TrainConfig::parse("warmup_fraction = 1.0").is_err());
        assert!(TrainConfig::parse("no equals sign").is_err());
        let cfg = TrainConfig::parse("# comment\n\nepochs = 2 # trailing\n").unwrap();
        assert_eq!(cfg.epochs, 2);
    }

    #[test]
    fn large_profile_values() {
        let p = TrainConfig::profile(Profile::Large);
        assert_eq!((p.encoder_lr, p.head_lr, p.epochs, p.model.d_h), (1.5e-5, 5e-4, 12, 1024));
        assert_eq!("large".parse::<Profile>().unwrap(), Profile::Large);
    }
}
