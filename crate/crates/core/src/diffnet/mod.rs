//! Small reverse-mode automatic differentiation engine with the layers and
//! optimizer needed by the estimator network.

mod graph;
pub mod layers;
mod tensor;

pub use graph::{Gradients, Graph, Unary, Var};
pub use tensor::Tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requested for a node that was never computed")]
    NoForward,
    #[error("gradient list does not match the parameter store: {0}")]
    Misaligned(String),
}

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// First-moment estimate.
    pub m: Tensor,
    /// Second-moment estimate.
    pub v: Tensor,
}

/// Named parameters plus Adam state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let [r, c] = value.shape;
        self.params.push(Param { name: name.into(), value, m: Tensor::zeros(r, c), v: Tensor::zeros(r, c) });
        ParamId(self.params.len() - 1)
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor { shape: [rows, cols], data })
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(store: &mut ParamStore, grads: &[Tensor], cfg: &AdamConfig) -> Result<(), DiffError> {
    if grads.len() != store.params.len() {
        return Err(DiffError::Misaligned(format!("{} gradients for {} parameters", grads.len(), store.params.len())));
    }
    if let Some((p, g)) = store.params.iter().zip(grads).find(|(p, g)| !p.value.same_shape(g)) {
        return Err(DiffError::Misaligned(format!("{}: {:?} vs {:?}", p.name, p.value.shape, g.shape)));
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (p, g) in store.params.iter_mut().zip(grads) {
        for i in 0..g.len() {
            let gi = g.data[i];
            let m = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * gi;
            let v = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            p.m.data[i] = m;
            p.v.data[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(id).unwrap().data, vec![1.0; 6]);
    }

    #[test]
    fn stop_gradient_is_exactly_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![0.3, -1.2]));
        let blocked = g.stop_gradient(x);
        let y = g.sin(blocked);
        let z = g.mul(y, x).unwrap();
        let loss = g.sum(z);
        let grads = g.backward(loss).unwrap();
        // only the direct path through `mul` reaches x
        let gx = grads.wrt(x).unwrap();
        assert_eq!(gx.data, vec![0.3f64.sin(), (-1.2f64).sin()]);

        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![0.3, -1.2]));
        let blocked = g.stop_gradient(x);
        let y = g.square(blocked);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(x).is_none_or(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(DiffError::Shape(_))));
        let empty = Graph::new();
        assert!(matches!(empty.backward(Var(0)), Err(DiffError::NoForward)));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::row(vec![1.0, 2.0]));
        store.params[0].m = Tensor::row(vec![0.5, -0.5]);
        store.params[0].v = Tensor::row(vec![0.25, 0.25]);
        adam_step(&mut store, &[Tensor::zeros(1, 2)], &AdamConfig::default()).unwrap();
        assert_eq!(store.get(id).m.data, vec![0.45, -0.45]);
        assert!(store.get(id).v.data[0] < 0.25);
        assert_eq!(store.step, 1);
        // first-step moments were not zero so params move; with fresh moments they must not
        let mut fresh = ParamStore::new();
        let id = fresh.add("p", Tensor::row(vec![1.0, 2.0]));
        adam_step(&mut fresh, &[Tensor::zeros(1, 2)], &AdamConfig::default()).unwrap();
        assert_eq!(fresh.value(id).data, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::row(vec![1.0, 2.0, 3.0]));
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        adam_step(&mut store, &[Tensor::row(vec![0.7, -3.0, 1e3])], &cfg).unwrap();
        let moved: Vec<f64> = store.value(id).data.iter().zip([1.0, 2.0, 3.0]).map(|(a, b)| a - b).collect();
        for (d, sign) in moved.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((d - sign * 0.01).abs() < 1e-7, "{d}");
        }
    }

    #[test]
    fn adam_rejects_misaligned() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::row(vec![1.0]));
        assert!(adam_step(&mut store, &[], &AdamConfig::default()).is_err());
        assert!(adam_step(&mut store, &[Tensor::zeros(2, 1)], &AdamConfig::default()).is_err());
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let id = store.add_uniform("w", 10, 10, 25, &mut rng);
        assert!(store.value(id).data.iter().all(|x| x.abs() < 0.2));
    }
}
