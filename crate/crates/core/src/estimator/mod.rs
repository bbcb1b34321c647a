//! Physics-infused soil parameter estimator.
//!
//! A window of observations is compressed by a temporal convolution,
//! mixed by an attention encoder, joined with the known wedge parameters
//! and mapped by a small dense network to the unknown parameters
//! (φ, c, δ, β, Δd) and a residual force. The unknowns are clipped to their
//! limits and pushed through a graph copy of the wedge force model; the
//! predicted interaction force is that plus the residual.

mod fee_layer;
mod loss;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fee_layer::{dngamma_layer, fee_layer, FeeVars};
pub use loss::{limit_violation, loss_from_head, LossParts, LossValues};
pub use model::{pinn_forward, BatchInputs, PinnModel, Prediction, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{evaluate, predict, train, EpochLog, TrainReport, TrainingExample};

use crate::diffnet::DiffError;
use crate::fee::{CutState, FeeTheta, SoilParams, ToolGeometry};
use crate::limits::{ParamRange, ParamTable};
use crate::simulator::OBS_DIM;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("window has {rows} rows, expected {expected}")]
    WindowLength { rows: usize, expected: usize },
    #[error("non-finite {0} in input")]
    NonFinite(&'static str),
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Observation rows ending at `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub rows: Vec<[f64; OBS_DIM]>,
    pub t_end: f64,
}

/// Wedge parameters that are measured or fixed by the machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownParams {
    pub c_a: f64,
    pub gamma: f64,
    pub rho: f64,
    pub alpha: f64,
    pub w: f64,
    pub d: f64,
    pub q: f64,
    pub v: [f64; 2],
}

pub const KNOWN_DIM: usize = 9;

impl KnownParams {
    pub fn tool(&self) -> ToolGeometry {
        ToolGeometry { rho: self.rho, alpha: self.alpha, w: self.w }
    }

    /// Full θ with the given unknowns.
    pub fn theta(&self, u: &EstimatedParams) -> FeeTheta {
        let tool = self.tool();
        FeeTheta {
            soil: SoilParams { phi: u.phi, c: u.c, delta: u.delta, c_a: self.c_a, gamma: self.gamma },
            tool,
            cut: CutState { d: self.d, q: self.q, v: self.v, i_b: tool.blade_up() },
            beta: u.beta,
            delta_d: u.delta_d,
        }
    }

    /// `tanh(−C1 i_b·v)`, computed exactly as the force model does.
    pub fn velocity_factor(&self) -> f64 {
        self.theta(&EstimatedParams::default()).velocity_factor()
    }

    /// Min-max normalized values in the network's input order.
    pub fn normalized(&self, t: &ParamTable) -> [f64; KNOWN_DIM] {
        [
            t.c_a.normalize(self.c_a),
            t.gamma.normalize(self.gamma),
            t.rho.normalize(self.rho),
            t.alpha.normalize(self.alpha),
            t.w.normalize(self.w),
            t.d_prime.normalize(self.d),
            t.q.normalize(self.q),
            t.v_x.normalize(self.v[0]),
            t.v_z.normalize(self.v[1]),
        ]
    }
}

/// The unknown parameters in physical units (rad, Pa, m).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatedParams {
    pub phi: f64,
    pub c: f64,
    pub delta: f64,
    pub beta: f64,
    pub delta_d: f64,
}

pub const UNKNOWN_DIM: usize = 5;
pub const HEAD_DIM: usize = UNKNOWN_DIM + 2;

impl EstimatedParams {
    pub fn ranges(t: &ParamTable) -> [ParamRange; UNKNOWN_DIM] {
        [t.phi, t.c, t.delta, t.beta, t.delta_d]
    }

    pub fn to_array(&self) -> [f64; UNKNOWN_DIM] {
        [self.phi, self.c, self.delta, self.beta, self.delta_d]
    }

    pub fn from_array(a: [f64; UNKNOWN_DIM]) -> Self {
        Self { phi: a[0], c: a[1], delta: a[2], beta: a[3], delta_d: a[4] }
    }

    pub fn within_limits(&self, t: &ParamTable) -> bool {
        Self::ranges(t).iter().zip(self.to_array()).all(|(r, x)| r.contains(x))
    }

    pub fn zeta(&self) -> f64 {
        self.phi - self.delta
    }
}

/// Standardization of observations and scaling of forces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub obs_mean: [f64; OBS_DIM],
    pub obs_std: [f64; OBS_DIM],
    /// Mean measured force magnitude of the training split, N.
    pub force_scale: f64,
    pub residual_scale: f64,
}

impl Normalizer {
    pub fn new(obs_mean: [f64; OBS_DIM], obs_std: [f64; OBS_DIM], force_scale: f64) -> Self {
        Self { obs_mean, obs_std, force_scale, residual_scale: 0.1 * force_scale }
    }

    pub fn normalize_obs(&self, row: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| (row[i] - self.obs_mean[i]) / self.obs_std[i])
    }

    pub fn denormalize_obs(&self, row: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        std::array::from_fn(|i| row[i] * self.obs_std[i] + self.obs_mean[i])
    }

    pub fn normalize_force(&self, f: [f64; 2]) -> [f64; 2] {
        [f[0] / self.force_scale, f[1] / self.force_scale]
    }

    pub fn denormalize_force(&self, f: [f64; 2]) -> [f64; 2] {
        [f[0] * self.force_scale, f[1] * self.force_scale]
    }

    pub fn table(&self) -> ParamTable {
        ParamTable::standard()
    }
}

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub force: f64,
    pub residual: f64,
    pub delta_d_mse: f64,
    pub dngamma_dbeta: f64,
    pub limit_phi: f64,
    pub limit_c: f64,
    pub limit_delta: f64,
    pub limit_beta: f64,
    pub limit_eta: f64,
    pub limit_zeta: f64,
    pub limit_delta_d: f64,
    pub limit_d_prime: f64,
    /// Per-axis weights of the force error.
    pub force_axes: [f64; 2],
    pub dngamma_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            force: 0.5,
            residual: 3e-2,
            delta_d_mse: 5e-3,
            dngamma_dbeta: 0.2,
            limit_phi: 1.0,
            limit_c: 1.0,
            limit_delta: 1.0,
            limit_beta: 10.0,
            limit_eta: 10.0,
            limit_zeta: 1.0,
            limit_delta_d: 1.0,
            limit_d_prime: 1.0,
            force_axes: [1.0, 1.0],
            dngamma_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn all_non_negative(&self) -> bool {
        [
            self.force,
            self.residual,
            self.delta_d_mse,
            self.dngamma_dbeta,
            self.limit_phi,
            self.limit_c,
            self.limit_delta,
            self.limit_beta,
            self.limit_eta,
            self.limit_zeta,
            self.limit_delta_d,
            self.limit_d_prime,
            self.force_axes[0],
            self.force_axes[1],
            self.dngamma_weight,
        ]
        .iter()
        .all(|&w| w >= 0.0)
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnConfig {
    pub seed: u64,
    pub window_len: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub encoder_ff_width: usize,
    pub integration_width: usize,
    pub integration_layers: usize,
    pub hidden_activation: crate::diffnet::layers::Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window_len: 60,
            conv_filters: 32,
            conv_kernel: 15,
            conv_stride: 15,
            encoder_depth: 2,
            encoder_heads: 4,
            encoder_ff_width: 64,
            integration_width: 20,
            integration_layers: 2,
            hidden_activation: crate::diffnet::layers::Activation::Softplus,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 300,
            weights: LossWeights::default(),
        }
    }
}
