//! Network definition, batched forward pass and checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_from_head, LossParts};
use super::{EstimatedParams, EstimatorError, KnownParams, LossWeights, Normalizer, ObservationWindow, PinnConfig, HEAD_DIM, KNOWN_DIM};
use crate::diffnet::layers::{Activation, Dense, EncoderStack, TemporalConv};
use crate::diffnet::{Graph, ParamStore, Tensor, Var};
use crate::fee;
use crate::limits::ParamTable;
use crate::simulator::OBS_DIM;

pub const CHECKPOINT_FORMAT: &str = "soil-pinn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PinnModel {
    pub config: PinnConfig,
    pub normalizer: Normalizer,
    pub store: ParamStore,
    conv: TemporalConv,
    encoder: EncoderStack,
    integration: Vec<Dense>,
    head: Dense,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: PinnConfig,
    normalizer: Normalizer,
    store: ParamStore,
}

/// Normalized network inputs for one batch.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub obs: Tensor,
    pub known_norm: Tensor,
    pub known: Vec<KnownParams>,
}

impl BatchInputs {
    pub fn new(windows: &[&ObservationWindow], known: &[KnownParams], norm: &Normalizer, window_len: usize) -> Result<Self, EstimatorError> {
        if windows.is_empty() || windows.len() != known.len() {
            return Err(EstimatorError::EmptyBatch);
        }
        let t = ParamTable::standard();
        let mut obs = Vec::with_capacity(windows.len() * window_len * OBS_DIM);
        for w in windows {
            if w.rows.len() != window_len {
                return Err(EstimatorError::WindowLength { rows: w.rows.len(), expected: window_len });
            }
            for r in &w.rows {
                if r.iter().any(|x| !x.is_finite()) {
                    return Err(EstimatorError::NonFinite("observation"));
                }
                obs.extend_from_slice(&norm.normalize_obs(r));
            }
        }
        let mut kn = Vec::with_capacity(known.len() * KNOWN_DIM);
        for k in known {
            let n = k.normalized(&t);
            if n.iter().any(|x| !x.is_finite()) {
                return Err(EstimatorError::NonFinite("known parameter"));
            }
            kn.extend_from_slice(&n);
        }
        Ok(Self {
            obs: Tensor::new(windows.len() * window_len, OBS_DIM, obs)?,
            known_norm: Tensor::new(known.len(), KNOWN_DIM, kn)?,
            known: known.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

/// One sample's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Unknowns after clipping.
    pub theta: EstimatedParams,
    /// Unknowns before clipping.
    pub raw: EstimatedParams,
    /// Residual force, N.
    pub residual: [f64; 2],
    /// Force-model part of the prediction, N.
    pub f_fee: [f64; 2],
    /// Predicted interaction force, N.
    pub f_hat: [f64; 2],
    /// Whether the raw η or β left its limits.
    pub masked: bool,
}

impl PinnModel {
    pub fn new(config: &PinnConfig, normalizer: Normalizer) -> Result<Self, EstimatorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (conv, encoder, integration, head) = Self::layers(config, &mut store, &mut rng)?;
        Ok(Self { config: config.clone(), normalizer, store, conv, encoder, integration, head })
    }

    #[allow(clippy::type_complexity)]
    fn layers(c: &PinnConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<(TemporalConv, EncoderStack, Vec<Dense>, Dense), EstimatorError> {
        let conv = TemporalConv::new(store, "conv", OBS_DIM, c.conv_filters, c.conv_kernel, c.conv_stride, rng);
        let len = conv.output_len(c.window_len);
        if len == 0 {
            return Err(EstimatorError::Checkpoint(format!("kernel {} longer than window {}", c.conv_kernel, c.window_len)));
        }
        let encoder = EncoderStack::new(store, "encoder", len, c.conv_filters, c.encoder_depth, c.encoder_heads, c.encoder_ff_width, rng)?;
        let mut inputs = len * c.conv_filters + KNOWN_DIM;
        let mut integration = Vec::new();
        for i in 0..c.integration_layers {
            integration.push(Dense::new(store, &format!("integration{i}"), inputs, c.integration_width, c.hidden_activation, rng));
            inputs = c.integration_width;
        }
        let head = Dense::new(store, "head", inputs, HEAD_DIM, Activation::Linear, rng);
        Ok((conv, encoder, integration, head))
    }

    /// The output layer, exposed so tests can pin the head.
    pub fn head_layer(&self) -> &Dense {
        &self.head
    }

    /// Raw normalized head output `[batch, 7]`.
    pub fn head_output(&self, g: &mut Graph, batch: &BatchInputs) -> Result<Var, EstimatorError> {
        let b = batch.len();
        let x = g.input(batch.obs.clone());
        let h = self.conv.forward(g, &self.store, x, b)?;
        let h = self.encoder.forward(g, &self.store, h, b)?;
        let flat = self.encoder.len * self.encoder.width;
        let h = g.reshape(h, b, flat)?;
        let k = g.input(batch.known_norm.clone());
        let mut h = g.concat_cols(&[h, k])?;
        for layer in &self.integration {
            h = layer.forward(g, &self.store, h)?;
        }
        Ok(self.head.forward(g, &self.store, h)?)
    }

    /// Forward pass through heads, clipping, force layer and every loss term.
    pub fn forward_loss(&self, g: &mut Graph, batch: &BatchInputs, target: Option<&[[f64; 2]]>, weights: &LossWeights) -> Result<LossParts, EstimatorError> {
        let head = self.head_output(g, batch)?;
        Ok(loss_from_head(g, head, &batch.known, target, &self.normalizer, weights)?)
    }

    pub fn to_json(&self) -> Result<String, EstimatorError> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            store: self.store.clone(),
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self, EstimatorError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(EstimatorError::Checkpoint(format!("not a checkpoint: {}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(EstimatorError::Checkpoint(format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut model = Self::new(&ck.config, ck.normalizer)?;
        let fresh: Vec<_> = model.store.iter().map(|p| (p.name.clone(), p.value.shape)).collect();
        let saved: Vec<_> = ck.store.iter().map(|p| (p.name.clone(), p.value.shape)).collect();
        if fresh != saved {
            return Err(EstimatorError::Checkpoint("parameter layout does not match the configured architecture".into()));
        }
        model.store = ck.store;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), EstimatorError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EstimatorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Estimates for a batch of windows.
///
/// The reported force-model part is evaluated with [`fee::fee_force_xz`] on
/// the clipped estimate, which matches the graph bit for bit wherever the
/// sample is unmasked; a singular wedge contributes zero.
pub fn pinn_forward(model: &PinnModel, windows: &[&ObservationWindow], known: &[KnownParams]) -> Result<Vec<Prediction>, EstimatorError> {
    let batch = BatchInputs::new(windows, known, &model.normalizer, model.config.window_len)?;
    let mut g = Graph::new();
    let parts = model.forward_loss(&mut g, &batch, None, &model.config.weights)?;
    let t = ParamTable::standard();
    let col = |v: Var| g.value(v).data.clone();
    let clipped: Vec<Vec<f64>> = parts.clipped.iter().map(|&v| col(v)).collect();
    let rx = col(parts.residual_xz[0]);
    let rz = col(parts.residual_xz[1]);
    let head = g.value(parts.head).clone();
    let rs = model.normalizer.residual_scale;
    Ok((0..batch.len())
        .map(|i| {
            let theta = EstimatedParams::from_array(std::array::from_fn(|j| clipped[j][i]));
            let ranges = EstimatedParams::ranges(&t);
            let raw = EstimatedParams::from_array(std::array::from_fn(|j| ranges[j].norm.0 + ranges[j].width() * head.at(i, j)));
            let f = fee::fee_force_xz(&known[i].theta(&theta)).unwrap_or_default();
            let residual = [rs * rx[i], rs * rz[i]];
            Prediction {
                theta,
                raw,
                residual,
                f_fee: [f.f_x, f.f_z],
                f_hat: [f.f_x + residual[0], f.f_z + residual[1]],
                masked: !parts.force_mask[i],
            }
        })
        .collect())
}
