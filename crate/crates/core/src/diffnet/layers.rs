//! Network layers built on [`Graph`] operations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, Graph, ParamId, ParamStore, Tensor, Unary, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Softplus,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.unary(x, Unary::Relu),
            Activation::Softplus => g.unary(x, Unary::Softplus),
            Activation::Gelu => g.unary(x, Unary::Gelu),
            Activation::Tanh => g.unary(x, Unary::Tanh),
        }
    }
}

/// Affine map followed by an activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), inputs, outputs, inputs, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, outputs, inputs, rng);
        Self { weight, bias, activation }
    }

    /// `x` is `[batch, inputs]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, DiffError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        let y = g.add_row(y, b)?;
        Ok(self.activation.apply(g, y))
    }
}

/// 1-D convolution over time shared by every channel group.
///
/// The kernel sees `kernel` consecutive rows of all input channels and
/// produces `filters` outputs; windows advance by `stride` rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub channels: usize,
    pub filters: usize,
}

impl TemporalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * channels;
        let weight = store.add_uniform(format!("{name}.weight"), fan_in, filters, fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), 1, filters, fan_in, rng);
        Self { weight, bias, kernel, stride, channels, filters }
    }

    pub fn output_len(&self, steps: usize) -> usize {
        if steps < self.kernel {
            0
        } else {
            (steps - self.kernel) / self.stride + 1
        }
    }

    /// `x` is `[batch · steps, channels]`; returns `[batch · output_len, filters]`.
    ///
    /// Weight row `tap · channels + ch` multiplies input channel `ch` at
    /// offset `tap` inside the window.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<Var, DiffError> {
        let [rows, cols] = g.value(x).shape;
        if cols != self.channels || batch == 0 || rows % batch != 0 {
            return Err(DiffError::Shape(format!(
                "temporal conv expects [batch*steps, {}], got [{rows}, {cols}] for batch {batch}",
                self.channels
            )));
        }
        let steps = rows / batch;
        let out_len = self.output_len(steps);
        if out_len == 0 {
            return Err(DiffError::Shape(format!("window of {steps} steps shorter than kernel {}", self.kernel)));
        }
        let width = self.kernel * self.channels;
        let mut idx = Vec::with_capacity(batch * out_len * width);
        for b in 0..batch {
            for t in 0..out_len {
                let start = b * steps + t * self.stride;
                for tap in 0..self.kernel {
                    for ch in 0..self.channels {
                        idx.push((start + tap) * self.channels + ch);
                    }
                }
            }
        }
        let unfolded = g.gather(x, idx, batch * out_len, width)?;
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(unfolded, w)?;
        g.add_row(y, b)
    }
}

/// Post-norm transformer encoder block: attention, add & norm, feed-forward, add & norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub out: Dense,
    pub norm1: (ParamId, ParamId),
    pub ff1: Dense,
    pub ff2: Dense,
    pub norm2: (ParamId, ParamId),
    pub heads: usize,
}

const LN_EPS: f64 = 1e-5;

fn norm_params(store: &mut ParamStore, name: &str, width: usize) -> (ParamId, ParamId) {
    let gain = store.add(format!("{name}.gain"), Tensor::filled(1, width, 1.0));
    let shift = store.add(format!("{name}.shift"), Tensor::zeros(1, width));
    (gain, shift)
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff_width: usize, rng: &mut impl Rng) -> Self {
        let lin = Activation::Linear;
        Self {
            query: Dense::new(store, &format!("{name}.query"), width, width, lin, rng),
            key: Dense::new(store, &format!("{name}.key"), width, width, lin, rng),
            value: Dense::new(store, &format!("{name}.value"), width, width, lin, rng),
            out: Dense::new(store, &format!("{name}.out"), width, width, lin, rng),
            norm1: norm_params(store, &format!("{name}.norm1"), width),
            ff1: Dense::new(store, &format!("{name}.ff1"), width, ff_width, Activation::Gelu, rng),
            ff2: Dense::new(store, &format!("{name}.ff2"), ff_width, width, lin, rng),
            norm2: norm_params(store, &format!("{name}.norm2"), width),
            heads,
        }
    }

    fn add_norm(g: &mut Graph, store: &ParamStore, a: Var, b: Var, norm: (ParamId, ParamId)) -> Result<Var, DiffError> {
        let s = g.add(a, b)?;
        let n = g.layer_norm(s, LN_EPS);
        let gain = g.param(store, norm.0);
        let shift = g.param(store, norm.1);
        let n = g.mul_row(n, gain)?;
        g.add_row(n, shift)
    }

    /// `x` is `[blocks · len, width]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, blocks: usize) -> Result<Var, DiffError> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let att = g.attention(q, k, v, blocks, self.heads)?;
        let att = self.out.forward(g, store, att)?;
        let x1 = Self::add_norm(g, store, x, att, self.norm1)?;
        let f = self.ff1.forward(g, store, x1)?;
        let f = self.ff2.forward(g, store, f)?;
        Self::add_norm(g, store, x1, f, self.norm2)
    }
}

/// Learned positional embedding followed by a stack of encoder blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderStack {
    pub position: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub len: usize,
    pub width: usize,
}

impl EncoderStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        len: usize,
        width: usize,
        depth: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, DiffError> {
        if heads == 0 || width % heads != 0 {
            return Err(DiffError::Shape(format!("width {width} not divisible by {heads} heads")));
        }
        let position = store.add_uniform(format!("{name}.position"), len, width, width, rng);
        let blocks = (0..depth)
            .map(|i| EncoderBlock::new(store, &format!("{name}.block{i}"), width, heads, ff_width, rng))
            .collect();
        Ok(Self { position, blocks, len, width })
    }

    /// `x` is `[batch · len, width]`; shape is preserved.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, batch: usize) -> Result<Var, DiffError> {
        let [rows, cols] = g.value(x).shape;
        if rows != batch * self.len || cols != self.width {
            return Err(DiffError::Shape(format!(
                "encoder expects [{}, {}], got [{rows}, {cols}]",
                batch * self.len,
                self.width
            )));
        }
        let pos = g.param(store, self.position);
        let n = self.len * self.width;
        let tiled = g.gather(pos, (0..batch * n).map(|i| i % n).collect(), rows, cols)?;
        let mut h = g.add(x, tiled)?;
        for block in &self.blocks {
            h = block.forward(g, store, h, batch)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_zero_weights_give_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut store, "d", 3, 2, Activation::Linear, &mut rng);
        *store.value_mut(d.weight) = Tensor::zeros(3, 2);
        *store.value_mut(d.bias) = Tensor::row(vec![0.5, -4.0]);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 7.0]).unwrap());
        let y = d.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).data, vec![0.5, -4.0, 0.5, -4.0]);
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut store, "d", 3, 3, Activation::Linear, &mut rng);
        *store.value_mut(d.weight) = Tensor::identity(3);
        *store.value_mut(d.bias) = Tensor::zeros(1, 3);
        let input = Tensor::new(1, 3, vec![1.5, -2.0, 0.25]).unwrap();
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = d.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &input);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dense::new(&mut store, "d", 3, 3, Activation::Linear, &mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(1, 4));
        assert!(d.forward(&mut g, &store, x).is_err());
    }

    #[test]
    fn conv_zero_weights_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = TemporalConv::new(&mut store, "c", 9, 8, 15, 15, &mut rng);
        *store.value_mut(conv.weight) = Tensor::zeros(15 * 9, 8);
        *store.value_mut(conv.bias) = Tensor::zeros(1, 8);
        let mut g = Graph::new();
        let x = g.input(Tensor::filled(120, 9, 3.0));
        let y = conv.forward(&mut g, &store, x, 2).unwrap();
        assert_eq!(g.value(y).shape, [8, 8]);
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_delta_kernel_selects_rows() {
        let (steps, ch, kernel, stride) = (60, 9, 15, 15);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = TemporalConv::new(&mut store, "c", ch, ch, kernel, stride, &mut rng);
        let center = kernel / 2;
        let mut w = Tensor::zeros(kernel * ch, ch);
        for c in 0..ch {
            w.set(center * ch + c, c, 1.0);
        }
        *store.value_mut(conv.weight) = w;
        *store.value_mut(conv.bias) = Tensor::zeros(1, ch);
        let input = Tensor::new(steps, ch, (0..steps * ch).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = conv.forward(&mut g, &store, x, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape, [4, ch]);
        for l in 0..4 {
            assert_eq!(out.row_slice(l), input.row_slice(l * stride + center));
        }
    }

    #[test]
    fn conv_rejects_bad_channels() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = TemporalConv::new(&mut store, "c", 9, 4, 15, 15, &mut rng);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(60, 8));
        assert!(conv.forward(&mut g, &store, x, 1).is_err());
    }

    #[test]
    fn uniform_attention_averages_values() {
        let mut g = Graph::new();
        let q = g.input(Tensor::new(3, 2, vec![1.0, 0.5, -2.0, 3.0, 0.1, 0.2]).unwrap());
        let k = g.input(Tensor::new(3, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap());
        let v = g.input(Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let out = g.attention(q, k, v, 1, 1).unwrap();
        for r in 0..3 {
            assert!((g.value(out).at(r, 0) - 3.0).abs() < 1e-15);
            assert!((g.value(out).at(r, 1) - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_position_attention_is_identity_on_values() {
        let mut g = Graph::new();
        let q = g.input(Tensor::new(2, 4, vec![1.0, -3.0, 0.2, 0.0, 5.0, 1.0, 1.0, 1.0]).unwrap());
        let k = g.input(Tensor::new(2, 4, vec![0.3, 2.0, -1.0, 4.0, 0.0, 0.0, 2.0, 1.0]).unwrap());
        let values = Tensor::new(2, 4, vec![7.0, 8.0, 9.0, 10.0, -1.0, -2.0, -3.0, -4.0]).unwrap();
        let v = g.input(values.clone());
        let out = g.attention(q, k, v, 2, 2).unwrap();
        assert_eq!(g.value(out), &values);
    }

    #[test]
    fn encoder_rejects_indivisible_heads() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(EncoderStack::new(&mut store, "e", 4, 30, 1, 4, 16, &mut rng).is_err());
    }

    #[test]
    fn encoder_preserves_shape() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderStack::new(&mut store, "e", 4, 8, 2, 2, 16, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(12, 8, (0..96).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let y = enc.forward(&mut g, &store, x, 3).unwrap();
        assert_eq!(g.value(y).shape, [12, 8]);
        assert!(g.value(y).all_finite());
    }
}
