use super::{
    gelu, gelu_grad, log_sum_exp, matmul_nn, matmul_nt, matmul_tn, softmax_row, ParamId, ParamStore, Tensor,
    LAYER_NORM_EPS,
};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    BroadcastRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Log(Var),
    Sum(Var),
    Mean(Var),
    Gather { table: Var, ids: Vec<usize> },
    Pick { x: Var, idx: Vec<usize> },
    LogSumExp(Var),
}

struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed primitives over a read-only parameter store.
///
/// Values are computed eagerly; `backward` replays the tape in reverse once.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    backward_done: bool,
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(Tensor::is_finite)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            backward_done: false,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.matrix("matmul")?;
        let (k2, n) = tb.matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(ta.data(), tb.data(), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = t.matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = t.data()[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push("transpose", Tensor::new(vec![n, m], out)?, Op::Transpose(a), rg)
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(name, t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())?;
        let rg = self.rg(&[a]);
        self.push("scale", out, Op::Scale(a, c), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Graph("concat of nothing".into()))?;
        let rows = self.value(first).matrix("concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.matrix("concat")?;
            if r != rows {
                return Err(shape_err("concat", self.value(first), t));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        self.push("concat", Tensor::new(vec![rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Graph("concat_rows of nothing".into()))?;
        let cols = self.value(first).matrix("concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            let (r, c) = t.matrix("concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", self.value(first), t));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        self.push(
            "concat_rows",
            Tensor::new(vec![rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix("slice_rows")?;
        if start > end || end > r {
            return Err(Error::Shape {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let out = Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(&[a]);
        self.push("slice_rows", out, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix("slice_cols")?;
        if start > end || end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let out = Tensor::new(vec![r, end - start], out)?;
        let rg = self.rg(&[a]);
        self.push("slice_cols", out, Op::SliceCols(a, start), rg)
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.matrix("broadcast_rows")?;
        if r != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                left: t.shape().to_vec(),
                right: vec![1, c],
            });
        }
        let out = Tensor::new(vec![rows, c], t.data().repeat(rows))?;
        let rg = self.rg(&[a]);
        self.push("broadcast_rows", out, Op::BroadcastRows(a), rg)
    }

    fn row_wise(&mut self, name: &'static str, a: Var, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
        let t = self.value(a);
        let (r, c) = t.matrix(name)?;
        if c == 0 {
            return Err(Error::Shape {
                op: name,
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            f(t.row_slice(i), &mut out[i * c..(i + 1) * c]);
        }
        Tensor::new(vec![r, c], out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.row_wise("softmax", a, softmax_row)?;
        let rg = self.rg(&[a]);
        self.push("softmax", out, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.row_wise("log_softmax", a, |x, o| {
            let lse = log_sum_exp(x);
            for (oi, xi) in o.iter_mut().zip(x) {
                *oi = xi - lse;
            }
        })?;
        let rg = self.rg(&[a]);
        self.push("log_softmax", out, Op::LogSoftmax(a), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| gelu(x)).collect())?;
        let rg = self.rg(&[a]);
        self.push("gelu", out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with learned `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = tx.matrix("layer_norm")?;
        if tg.shape() != [1, c] || tb.shape() != [1, c] || c == 0 {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = tx.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![r, c], out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x.ln()).collect())?;
        let rg = self.rg(&[a]);
        self.push("log", out, Op::Log(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Graph("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[a]);
        self.push("mean", Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Gathers rows of `table` (embedding lookup).
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (r, c) = t.matrix("embedding_lookup")?;
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Shape {
                    op: "embedding_lookup",
                    left: t.shape().to_vec(),
                    right: vec![id],
                });
            }
            out.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), c], out)?;
        let rg = self.rg(&[table]);
        self.push(
            "embedding_lookup",
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Picks elements by flat row-major index into a `1 x k` row.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            out.push(*t.data().get(i).ok_or_else(|| Error::Shape {
                op: "pick",
                left: t.shape().to_vec(),
                right: vec![i],
            })?);
        }
        let rg = self.rg(&[a]);
        self.push("pick", Tensor::row(out), Op::Pick { x: a, idx: idx.to_vec() }, rg)
    }

    /// log(sum(exp(x))) over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Graph("log_sum_exp of an empty tensor".into()));
        }
        let v = log_sum_exp(t.data());
        let rg = self.rg(&[a]);
        self.push("log_sum_exp", Tensor::scalar(v), Op::LogSumExp(a), rg)
    }

    /// Reverse pass from a scalar loss. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Graph(format!("loss must be scalar, got shape {:?}", lt.shape())));
        }
        let seed = Tensor::new(lt.shape().to_vec(), vec![1.0])?;
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Graph("loss does not depend on any parameter".into()));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(seed);
        let mut out = Gradients {
            params: vec![None; self.store.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, g, &mut grads, &mut out)?;
        }
        if !out.is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        i: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let node = &self.nodes[i];
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        let y = self.value(Var(i));
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => match &mut out.params[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if rg(a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(g.data(), tb.data(), m, n, k, &mut da);
                    acc(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if rg(b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(ta.data(), g.data(), m, k, n, &mut db);
                    acc(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (g.rows(), g.cols());
                let mut d = vec![0.0; r * c];
                for p in 0..r {
                    for q in 0..c {
                        d[q * r + p] = g.data()[p * c + q];
                    }
                }
                acc(grads, *a, Tensor::new(vec![c, r], d)?);
            }
            Op::Add(a, b) => {
                if rg(a) {
                    acc(grads, *a, g.clone());
                }
                if rg(b) {
                    acc(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if rg(a) {
                    acc(grads, *a, g.clone());
                }
                if rg(b) {
                    let neg = g.data().iter().map(|x| -x).collect();
                    acc(grads, *b, Tensor::new(g.shape().to_vec(), neg)?);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if rg(a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
                }
                if rg(b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    acc(grads, *b, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, c) => {
                let d = g.data().iter().map(|x| x * c).collect();
                acc(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if rg(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        acc(grads, *p, Tensor::new(vec![rows, w], d)?);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if rg(p) {
                        let d = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        acc(grads, *p, Tensor::new(vec![r, cols], d)?);
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = Tensor::zeros(src.shape());
                d.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let (r, c) = (src.rows(), src.cols());
                let w = g.cols();
                let mut d = Tensor::zeros(src.shape());
                for i in 0..r {
                    d.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                acc(grads, *a, d);
            }
            Op::BroadcastRows(a) => {
                let c = g.cols();
                let mut d = vec![0.0; c];
                for r in 0..g.rows() {
                    for (x, v) in d.iter_mut().zip(g.row_slice(r)) {
                        *x += v;
                    }
                }
                acc(grads, *a, Tensor::row(d));
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(grads, *a, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        d[r * c + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                acc(grads, *a, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(gv, xv)| gv * gelu_grad(*xv)).collect();
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = (g.rows(), g.cols());
                let tg = self.value(*gain);
                if rg(gain) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g.data()[i * c + j] * xhat[i * c + j];
                        }
                    }
                    acc(grads, *gain, Tensor::row(dg));
                }
                if rg(bias) {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for (d, v) in db.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                    acc(grads, *bias, Tensor::row(db));
                }
                if rg(x) {
                    let mut dx = vec![0.0; r * c];
                    let cf = c as f64;
                    for i in 0..r {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let dh = g.data()[i * c + j] * tg.data()[j];
                            mean_d += dh;
                            mean_dx += dh * xhat[i * c + j];
                        }
                        mean_d /= cf;
                        mean_dx /= cf;
                        for j in 0..c {
                            let dh = g.data()[i * c + j] * tg.data()[j];
                            dx[i * c + j] = inv_std[i] * (dh - mean_d - xhat[i * c + j] * mean_dx);
                        }
                    }
                    acc(grads, *x, Tensor::new(vec![r, c], dx)?);
                }
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(gv, xv)| gv / xv).collect();
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(grads, *a, Tensor::filled(x.shape(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                acc(grads, *a, Tensor::filled(x.shape(), g.data()[0] / x.len() as f64));
            }
            Op::Gather { table, ids } => {
                let t = self.value(*table);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (k, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        d.data_mut()[id * c + j] += g.data()[k * c + j];
                    }
                }
                acc(grads, *table, d);
            }
            Op::Pick { x, idx } => {
                let t = self.value(*x);
                let mut d = Tensor::zeros(t.shape());
                for (k, &i) in idx.iter().enumerate() {
                    d.data_mut()[i] += g.data()[k];
                }
                acc(grads, *x, d);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let lse = y.data()[0];
                let gv = g.data()[0];
                let d = x.data().iter().map(|v| gv * (v - lse).exp()).collect();
                acc(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}
