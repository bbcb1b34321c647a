//! Eager tape of tensor operations with a reverse sweep.
//!
//! Every operation computes its value immediately and appends a node, so
//! node ids are already a topological order and the backward pass is a
//! single reverse walk over the tape.

use super::tensor::Tensor;
use super::{DiffError, ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sin,
    Cos,
    Tanh,
    Relu,
    /// `ln(1 + eˣ)`.
    Softplus,
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    Abs,
    Square,
    Exp,
    Recip,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_C: f64 = 0.044715;

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Exp => x.exp(),
            Unary::Recip => 1.0 / x,
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => 1.0 / (1.0 + (-x).exp()),
            Unary::Gelu => {
                let u = GELU_K * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Unary::Abs => x.signum() * if x == 0.0 { 0.0 } else { 1.0 },
            Unary::Square => 2.0 * x,
            Unary::Exp => y,
            Unary::Recip => -y * y,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    StopGrad,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `[m, n] + [1, n]` broadcast over rows.
    AddRow(Var, Var),
    /// `[m, n] ⊙ [1, n]` broadcast over rows.
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Clamp(Var, f64, f64),
    /// `out[i] = in[idx[i]]`.
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    /// `Σ wᵢ xᵢ` as a 1×1 tensor.
    WeightedSum(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        blocks: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Select(Vec<bool>, Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, zero if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(|g| g.as_ref())
    }

    /// One gradient per store entry, zero-filled where unused.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .enumerate()
            .map(|(i, p)| match self.params.get(i).and_then(|g| g.as_ref()) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.rows(), p.value.cols()),
            })
            .collect()
    }
}

fn shape_err<T>(what: &str, a: &Tensor, b: &Tensor) -> Result<T, DiffError> {
    Err(DiffError::Shape(format!("{what}: {:?} vs {:?}", a.shape, b.shape)))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; gradients are recorded but go nowhere.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Identity in the forward pass; blocks all gradient flow to `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGrad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return shape_err("matmul", ta, tb);
        }
        let value = ta.matmul(tb);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return shape_err(name, ta, tb);
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape, data };
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, mul: bool) -> Result<Var, DiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return shape_err("row broadcast", ta, tr);
        }
        let n = ta.cols();
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| if mul { x * tr.data[i % n] } else { x + tr.data[i % n] })
            .collect();
        let value = Tensor { shape: ta.shape, data };
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        Ok(self.push(value, op))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_broadcast(a, row, false)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        self.row_broadcast(a, row, true)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| k * x);
        self.push(value, Op::Scale(a, k))
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        self.push(value, Op::Offset(a))
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let value = self.value(a).map(|x| f.apply(x));
        self.push(value, Op::Unary(a, f))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Cos)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    /// Hard clamp to `[lo, hi]` (either may be infinite); zero gradient outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    /// Elementwise gather into a new `rows × cols` tensor.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let src = self.value(a);
        if indices.len() != rows * cols {
            return Err(DiffError::Shape(format!("gather of {} indices into {rows}x{cols}", indices.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.len()) {
            return Err(DiffError::Shape(format!("gather index {bad} out of range {}", src.len())));
        }
        let data = indices.iter().map(|&i| src.data[i]).collect();
        Ok(self.push(Tensor { shape: [rows, cols], data }, Op::Gather(a, indices)))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let n = self.value(a).len();
        self.gather(a, (0..n).collect(), rows, cols)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let [r, c] = self.value(a).shape;
        if start > end || end > c {
            return Err(DiffError::Shape(format!("column slice {start}..{end} of {c}")));
        }
        let w = end - start;
        let idx = (0..r).flat_map(|i| (start..end).map(move |j| i * c + j)).collect();
        self.gather(a, idx, r, w)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(DiffError::Shape("concat_cols with mismatched row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(Tensor { shape: [rows, cols], data }, Op::ConcatCols(parts.to_vec())))
    }

    pub fn weighted_sum(&mut self, a: Var, weights: Vec<f64>) -> Result<Var, DiffError> {
        let t = self.value(a);
        if weights.len() != t.len() {
            return Err(DiffError::Shape(format!("{} weights for {} values", weights.len(), t.len())));
        }
        let s = t.data.iter().zip(&weights).map(|(x, w)| x * w).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.weighted_sum(a, vec![1.0; n]).expect("weights sized to input")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.weighted_sum(a, vec![1.0 / n as f64; n]).expect("weights sized to input")
    }

    /// Row-wise standardization `(x − μ) / sqrt(σ² + eps)`.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let [r, c] = t.shape;
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = t.row_slice(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                normalized[i * c + j] = (row[j] - mu) * is;
            }
        }
        let value = Tensor { shape: [r, c], data: normalized.clone() };
        self.push(value, Op::LayerNorm { x, normalized, inv_std })
    }

    /// Multi-head scaled dot-product self-attention within independent blocks.
    ///
    /// `q`, `k` and `v` are `[blocks · len, width]`; rows `b·len .. (b+1)·len`
    /// form one sequence and only attend to each other. `width` must be
    /// divisible by `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, blocks: usize, heads: usize) -> Result<Var, DiffError> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if !tq.same_shape(tk) || !tq.same_shape(tv) {
            return shape_err("attention", tq, tk);
        }
        let [rows, width] = tq.shape;
        if blocks == 0 || rows % blocks != 0 || heads == 0 || width % heads != 0 {
            return Err(DiffError::Shape(format!(
                "attention over {rows}x{width} with {blocks} blocks and {heads} heads"
            )));
        }
        let len = rows / blocks;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; blocks * heads * len * len];
        let mut out = vec![0.0; rows * width];
        let mut scores = vec![0.0; len];
        for b in 0..blocks {
            for h in 0..heads {
                let col = h * dh;
                let p_base = (b * heads + h) * len * len;
                for i in 0..len {
                    let qi = &tq.data[(b * len + i) * width + col..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &tk.data[(b * len + j) * width + col..][..dh];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    for j in 0..len {
                        let p = scores[j] / z;
                        probs[p_base + i * len + j] = p;
                        let vj = &tv.data[(b * len + j) * width + col..][..dh];
                        let o = &mut out[(b * len + i) * width + col..][..dh];
                        for (o, &vv) in o.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
            }
        }
        let value = Tensor { shape: [rows, width], data: out };
        Ok(self.push(value, Op::Attention { q, k, v, blocks, heads, probs }))
    }

    /// Attention weights of an attention node, laid out `[block][head][query][key]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Elementwise `mask ? a : b`.
    pub fn select(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) || mask.len() != ta.len() {
            return shape_err("select", ta, tb);
        }
        let data = mask.iter().zip(ta.data.iter().zip(&tb.data)).map(|(&m, (&x, &y))| if m { x } else { y }).collect();
        let value = Tensor { shape: ta.shape, data };
        Ok(self.push(value, Op::Select(mask, a, b)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(DiffError::NoForward);
        };
        if node.value.len() != 1 {
            return Err(DiffError::Shape(format!("backward from non-scalar {:?}", node.value.shape)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params: Vec<Option<Tensor>> = Vec::new();

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf | Op::StopGrad => {}
                Op::Param(pid) => {
                    if params.len() <= pid.0 {
                        params.resize(pid.0 + 1, None);
                    }
                    match &mut params[pid.0] {
                        Some(existing) => existing.add_assign(&g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, g.matmul_t(tb));
                    acc(&mut grads, *b, ta.t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, zip_map(&g, tb, |gi, y| gi * y));
                    acc(&mut grads, *b, zip_map(&g, ta, |gi, x| gi * x));
                }
                Op::Div(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    acc(&mut grads, *a, zip_map(&g, tb, |gi, y| gi / y));
                    let gb = Tensor {
                        shape: g.shape,
                        data: (0..g.len()).map(|i| -g.data[i] * ta.data[i] / (tb.data[i] * tb.data[i])).collect(),
                    };
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let n = g.cols();
                    let mut gr = Tensor::zeros(1, n);
                    for (i, &x) in g.data.iter().enumerate() {
                        gr.data[i % n] += x;
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, gr);
                }
                Op::MulRow(a, row) => {
                    let (ta, tr) = (self.value(*a), self.value(*row));
                    let n = g.cols();
                    let mut gr = Tensor::zeros(1, n);
                    let mut ga = g.clone();
                    for i in 0..g.len() {
                        gr.data[i % n] += g.data[i] * ta.data[i];
                        ga.data[i] = g.data[i] * tr.data[i % n];
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g.map(|x| k * x)),
                Op::Offset(a) => acc(&mut grads, *a, g.clone()),
                Op::Unary(a, f) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let data = (0..g.len()).map(|i| g.data[i] * f.derivative(x.data[i], y.data[i])).collect();
                    acc(&mut grads, *a, Tensor { shape: g.shape, data });
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let data = (0..g.len())
                        .map(|i| if x.data[i] >= *lo && x.data[i] <= *hi { g.data[i] } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, Tensor { shape: g.shape, data });
                }
                Op::Gather(a, idx) => {
                    let src = self.value(*a);
                    let mut ga = Tensor::zeros(src.rows(), src.cols());
                    for (o, &i) in idx.iter().enumerate() {
                        ga.data[i] += g.data[o];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Tensor::zeros(rows, w);
                        for r in 0..rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::WeightedSum(a, w) => {
                    let s = g.item();
                    let t = self.value(*a);
                    acc(&mut grads, *a, Tensor { shape: t.shape, data: w.iter().map(|wi| wi * s).collect() });
                }
                Op::LayerNorm { x, normalized, inv_std } => {
                    let [r, c] = g.shape;
                    let mut gx = Tensor::zeros(r, c);
                    for i in 0..r {
                        let gy = g.row_slice(i);
                        let yh = &normalized[i * c..(i + 1) * c];
                        let mean_g = gy.iter().sum::<f64>() / c as f64;
                        let mean_gy = gy.iter().zip(yh).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx.data[i * c + j] = inv_std[i] * (gy[j] - mean_g - yh[j] * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Attention { q, k, v, blocks, heads, probs } => {
                    let (gq, gk, gv) = attention_backward(
                        &g,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *blocks,
                        *heads,
                        probs,
                    );
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::Select(mask, a, b) => {
                    let ga = Tensor {
                        shape: g.shape,
                        data: mask.iter().zip(&g.data).map(|(&m, &x)| if m { x } else { 0.0 }).collect(),
                    };
                    let gb = Tensor {
                        shape: g.shape,
                        data: mask.iter().zip(&g.data).map(|(&m, &x)| if m { 0.0 } else { x }).collect(),
                    };
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor { shape: a.shape, data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() }
}

fn attention_backward(
    g: &Tensor,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    blocks: usize,
    heads: usize,
    probs: &[f64],
) -> (Tensor, Tensor, Tensor) {
    let [rows, width] = q.shape;
    let len = rows / blocks;
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Tensor::zeros(rows, width);
    let mut gk = Tensor::zeros(rows, width);
    let mut gv = Tensor::zeros(rows, width);
    let mut dp = vec![0.0; len];
    for b in 0..blocks {
        for h in 0..heads {
            let col = h * dh;
            let p_base = (b * heads + h) * len * len;
            for i in 0..len {
                let gi = &g.data[(b * len + i) * width + col..][..dh];
                let p_row = &probs[p_base + i * len..][..len];
                // dV_j += p_ij g_i ; dP_ij = g_i · v_j
                for j in 0..len {
                    let vj = &v.data[(b * len + j) * width + col..][..dh];
                    dp[j] = gi.iter().zip(vj).map(|(a, c)| a * c).sum();
                    let gvj = &mut gv.data[(b * len + j) * width + col..][..dh];
                    for (o, &x) in gvj.iter_mut().zip(gi) {
                        *o += p_row[j] * x;
                    }
                }
                let dot: f64 = dp.iter().zip(p_row).map(|(a, c)| a * c).sum();
                let qi_off = (b * len + i) * width + col;
                for j in 0..len {
                    let ds = p_row[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj_off = (b * len + j) * width + col;
                    for t in 0..dh {
                        gq.data[qi_off + t] += ds * k.data[kj_off + t];
                        gk.data[kj_off + t] += ds * q.data[qi_off + t];
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}
