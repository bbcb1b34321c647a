//! Planar bladed-vehicle earthmoving simulator.
//!
//! A chassis and a blade are joined by spring-damper links. The soil ahead
//! of the blade is a heightfield that resists the blade with a one-sided,
//! Coulomb-like constraint capped at the wedge-failure threshold; once the
//! blade pushes harder the soil shears, the heightfield is cut down to the
//! blade edge and the removed soil piles up on the blade. The measured
//! interaction force is the chassis-blade link force.

pub mod controller;
pub mod record;
pub mod soil;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fee::{self, FeeTheta, ForceXZ, SoilParams, ToolGeometry};
use crate::limits::ParamTable;
pub use controller::{anti_stall_update, ControllerState};
pub use record::{EpisodeMeta, EpisodeRecord, EpisodeSpec, StepRow, OBS_DIM, OBS_NAMES};
pub use soil::{soil_props_from_density, Heightfield, SoilConfig, SoilTable, SoilType};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("relative density {0} is outside [0, 100]")]
    InvalidDensity(f64),
    #[error("unknown soil type {0:?}")]
    UnknownSoilType(String),
    #[error("invalid episode parameters: {0}")]
    InvalidSpec(String),
    #[error("simulation became unstable at step {step}: {what}")]
    Unstable { step: usize, what: String },
    #[error("episode format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// The soil only ever pushes back with the wedge-failure force; removed
    /// soil is discarded so the surcharge stays zero.
    FeePure,
    /// Adds the surcharge pile, its reduced contribution and extent-based
    /// failure angle, edge bearing, contact friction and shear transients.
    Default,
}

/// All tunables of the simulator. Angles in degrees, SI units otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub control_hz: f64,
    pub substeps: usize,
    pub duration_s: f64,

    pub chassis_mass_kg: f64,
    pub chassis_length_m: f64,
    pub blade_mass_kg: f64,
    pub blade_width_m: f64,
    pub blade_height_m: f64,
    /// Blade edge position ahead of the chassis centre, m.
    pub blade_offset_m: f64,
    pub blade_angle_deg: f64,
    pub surface_slope_deg: f64,
    pub blade_reach_below_m: f64,
    pub blade_reach_above_m: f64,

    /// Motorized forward drive: force per unit velocity error.
    pub drive_gain_n_s_per_m: f64,
    pub force_limit_x_n: f64,
    pub force_limit_z_n: f64,
    pub link_x_stiffness_n_per_m: f64,
    pub link_x_damping_n_s_per_m: f64,
    pub link_z_stiffness_n_per_m: f64,
    pub link_z_damping_n_s_per_m: f64,
    pub suspension_hz: f64,
    /// Heightfield sample offsets under the chassis, m.
    pub suspension_samples_m: [f64; 4],

    pub terrain_start_m: f64,
    pub terrain_length_m: f64,
    pub terrain_dx_m: f64,

    pub controller_k_v: f64,
    pub controller_c_vx: f64,
    pub controller_offset_margin_m: f64,
    pub velocity_filter_len: usize,

    pub adhesion_pa: f64,
    pub tool_friction_deg: f64,
    pub tool_friction_fee_pure_deg: f64,
    pub soils: SoilTable,

    pub surcharge_factor: f64,
    pub repose_deg: f64,
    pub spill_rate_per_s: f64,
    /// Largest pile cross-section the blade can carry, m².
    pub pile_capacity_m2: f64,
    pub pile_drag_coeff: f64,
    /// Share of the pile weight carried by the blade.
    pub pile_load_fraction: f64,
    pub edge_thickness_m: f64,
    pub contact_friction_coeff: f64,
    pub transient_tau_s: f64,
    pub transient_x_n: f64,
    pub transient_z_n: f64,
    /// Threshold force at which transients reach full amplitude, N.
    pub transient_ref_n: f64,
    pub shear_event_min_m: f64,

    pub max_speed_m_per_s: f64,
    pub max_abs_z_m: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_hz: 60.0,
            substeps: 16,
            duration_s: 10.0,
            chassis_mass_kg: 5000.0,
            chassis_length_m: 3.0,
            blade_mass_kg: 400.0,
            blade_width_m: 3.164,
            blade_height_m: 0.66,
            blade_offset_m: 1.8,
            blade_angle_deg: 80.0,
            surface_slope_deg: 0.0,
            blade_reach_below_m: 0.3,
            blade_reach_above_m: 1.0,
            drive_gain_n_s_per_m: 1.5e5,
            force_limit_x_n: 20e3,
            force_limit_z_n: 30e3,
            link_x_stiffness_n_per_m: 2e6,
            link_x_damping_n_s_per_m: 4e4,
            link_z_stiffness_n_per_m: 2e6,
            link_z_damping_n_s_per_m: 4e4,
            suspension_hz: 2.0,
            suspension_samples_m: [-1.125, -0.375, 0.375, 1.125],
            terrain_start_m: -5.0,
            terrain_length_m: 30.0,
            terrain_dx_m: 0.02,
            controller_k_v: 0.05,
            controller_c_vx: 0.2,
            controller_offset_margin_m: 0.05,
            velocity_filter_len: 10,
            adhesion_pa: 200.0,
            tool_friction_deg: 10.0,
            tool_friction_fee_pure_deg: 15.0,
            soils: SoilTable::default(),
            surcharge_factor: 0.1,
            repose_deg: 35.0,
            spill_rate_per_s: 0.5,
            pile_capacity_m2: 0.3,
            pile_drag_coeff: 0.4,
            pile_load_fraction: 0.3,
            edge_thickness_m: 0.01,
            contact_friction_coeff: 0.3,
            transient_tau_s: 0.05,
            transient_x_n: 5e3,
            transient_z_n: 10e3,
            transient_ref_n: 15e3,
            shear_event_min_m: 0.03,
            max_speed_m_per_s: 10.0,
            max_abs_z_m: 5.0,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.duration_s * self.control_hz).round() as usize
    }

    pub fn tool(&self) -> ToolGeometry {
        ToolGeometry {
            rho: self.blade_angle_deg.to_radians(),
            alpha: self.surface_slope_deg.to_radians(),
            w: self.blade_width_m,
        }
    }

    /// Surcharge force that enters the wedge threshold.
    pub fn effective_surcharge(&self, mode: SimMode, q: f64) -> f64 {
        match mode {
            SimMode::FeePure => 0.0,
            SimMode::Default => self.surcharge_factor * q,
        }
    }

    pub fn soil_config(&self, t: SoilType, relative_density: f64, mode: SimMode) -> Result<SoilConfig, SimError> {
        let p = soil_props_from_density(t, relative_density, &self.soils)?;
        let delta = match mode {
            SimMode::FeePure => self.tool_friction_fee_pure_deg,
            SimMode::Default => self.tool_friction_deg,
        };
        Ok(SoilConfig {
            soil_type: t,
            relative_density,
            params: SoilParams { phi: p.phi, c: p.c, delta: delta.to_radians(), c_a: self.adhesion_pa, gamma: p.gamma },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x_c: f64,
    pub z_c: f64,
    pub vx_c: f64,
    pub vz_c: f64,
    /// Blade edge position and velocity.
    pub x_b: f64,
    pub z_b: f64,
    pub vx_b: f64,
    pub vz_b: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pulse {
    t0: f64,
    ax: f64,
    az: f64,
}

/// Commands held over one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub u_x: f64,
    /// Blade height relative to the chassis, m.
    pub u_zr: f64,
}

/// Soil bookkeeping, all masses in kg.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SoilLedger {
    pub removed: f64,
    pub surcharge: f64,
    pub spilled: f64,
}

/// Output of one soil-reaction evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reaction {
    /// Force on the blade, N.
    pub force: ForceXZ,
    pub sheared: bool,
    /// The wedge used for the threshold, if any.
    pub theta: Option<FeeTheta>,
}

/// One-sided soil reaction on a blade with predicted velocity `v_pred`.
///
/// `impulse_cap` converts a velocity into the force that would stop the blade
/// within one substep. The soil pushes back with at most the threshold; a
/// singular wedge never shears.
pub fn soil_reaction(threshold: Option<(ForceXZ, FeeTheta)>, d: f64, v_pred: [f64; 2], impulse_cap: f64) -> Reaction {
    let none = Reaction { force: ForceXZ::default(), sheared: false, theta: threshold.map(|t| t.1) };
    if d <= 0.0 || v_pred[0] <= 0.0 {
        return none;
    }
    let needed = impulse_cap * v_pred[0];
    match threshold {
        None => Reaction { force: ForceXZ::new(-needed, 0.0), sheared: false, theta: None },
        Some((f, theta)) => {
            if f.f_x <= 0.0 {
                return Reaction { force: ForceXZ::default(), sheared: true, theta: Some(theta) };
            }
            if needed > f.f_x {
                Reaction { force: ForceXZ::new(-f.f_x, -f.f_z), sheared: true, theta: Some(theta) }
            } else {
                let s = needed / f.f_x;
                Reaction { force: ForceXZ::new(-needed, -f.f_z * s), sheared: false, theta: Some(theta) }
            }
        }
    }
}

/// A running simulation.
pub struct Simulator {
    pub cfg: SimConfig,
    pub spec: EpisodeSpec,
    pub soil: SoilConfig,
    pub tool: ToolGeometry,
    pub state: VehicleState,
    pub terrain: Heightfield,
    pub controller: ControllerState,
    pub ledger: SoilLedger,
    filter: VecDeque<[f64; 2]>,
    rng: ChaCha8Rng,
    pulses: Vec<Pulse>,
    since_event: f64,
    t: f64,
    step: usize,
    beta_range: (f64, f64),
}

impl Simulator {
    pub fn new(cfg: &SimConfig, spec: &EpisodeSpec) -> Result<Self, SimError> {
        if !(spec.v_target > 0.0) {
            return Err(SimError::InvalidSpec(format!("target velocity {} must be positive", spec.v_target)));
        }
        if !(spec.d_target.is_finite() && spec.d_target >= -cfg.blade_reach_above_m && spec.d_target <= cfg.blade_reach_below_m) {
            return Err(SimError::InvalidSpec(format!("target depth {} outside the blade reach", spec.d_target)));
        }
        if cfg.substeps == 0 || cfg.velocity_filter_len == 0 {
            return Err(SimError::InvalidSpec("substeps and filter length must be positive".into()));
        }
        let soil = cfg.soil_config(spec.soil_type, spec.relative_density, spec.mode)?;
        let state = VehicleState { x_b: cfg.blade_offset_m, ..Default::default() };
        Ok(Self {
            cfg: cfg.clone(),
            spec: *spec,
            soil,
            tool: cfg.tool(),
            state,
            terrain: Heightfield::flat(cfg.terrain_start_m, cfg.terrain_length_m, cfg.terrain_dx_m),
            controller: ControllerState::new(spec.v_target, spec.d_target, cfg.controller_k_v, cfg.controller_c_vx, cfg.controller_offset_margin_m),
            ledger: SoilLedger::default(),
            filter: VecDeque::with_capacity(cfg.velocity_filter_len),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            pulses: Vec::new(),
            since_event: 0.0,
            t: 0.0,
            step: 0,
            beta_range: ParamTable::standard().beta_interval(),
        })
    }

    pub fn depth_of_cut(&self) -> f64 {
        self.terrain.surface_ahead(self.state.x_b) - self.state.z_b
    }

    pub fn surcharge_force(&self) -> f64 {
        self.ledger.surcharge * GRAVITY
    }

    fn filtered_velocity(&self) -> [f64; 2] {
        if self.filter.is_empty() {
            return [self.state.vx_c, self.state.vz_b];
        }
        let n = self.filter.len() as f64;
        let s = self.filter.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        [s[0] / n, s[1] / n]
    }

    fn ground_under_chassis(&self) -> f64 {
        let s = &self.cfg.suspension_samples_m;
        s.iter().map(|o| self.terrain.height_at(self.state.x_c + o)).sum::<f64>() / s.len() as f64
    }

    fn beta_for(&self, d: f64, v: [f64; 2], q: f64) -> f64 {
        match self.spec.mode {
            SimMode::FeePure => {
                let theta = FeeTheta {
                    soil: self.soil.params,
                    tool: self.tool,
                    cut: fee::CutState { d: d.max(0.0), q: 0.0, v, i_b: self.tool.blade_up() },
                    beta: self.beta_range.1,
                    delta_d: 0.0,
                };
                fee::solve_beta_star(&theta, self.beta_range).unwrap_or(self.beta_range.1)
            }
            SimMode::Default => soil::surcharge_extent_beta(
                q,
                self.soil.params.gamma,
                self.tool.w,
                d,
                self.tool.rho,
                self.cfg.repose_deg.to_radians(),
                self.beta_range,
            ),
        }
    }

    fn disturbance(&mut self) -> [f64; 2] {
        let tau = self.cfg.transient_tau_s;
        let t = self.t;
        self.pulses.retain(|p| t - p.t0 < 12.0 * tau);
        self.pulses.iter().fold([0.0, 0.0], |acc, p| {
            let s = (t - p.t0) / tau;
            let k = s * (1.0 - s).exp();
            [acc[0] + p.ax * k, acc[1] + p.az * k]
        })
    }

    fn maybe_shear_event(&mut self, advance: f64, d: f64, beta: f64, threshold: f64) {
        self.since_event += advance;
        let chunk = (0.5 * d * (1.0 / beta.tan() + 1.0 / self.tool.rho.tan())).max(self.cfg.shear_event_min_m);
        if self.since_event < chunk {
            return;
        }
        self.since_event = 0.0;
        let engage = (threshold / self.cfg.transient_ref_n).min(1.0);
        let mut amp = |a: f64| {
            let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * a * engage * self.rng.random_range(0.3..=1.0)
        };
        let ax = amp(self.cfg.transient_x_n);
        let az = amp(self.cfg.transient_z_n);
        self.pulses.push(Pulse { t0: self.t, ax, az });
    }

    fn check(&self) -> Result<(), SimError> {
        let s = &self.state;
        let vals = [s.x_c, s.z_c, s.vx_c, s.vz_c, s.x_b, s.z_b, s.vx_b, s.vz_b];
        let bad = |what: &str| Err(SimError::Unstable { step: self.step, what: what.to_string() });
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite state");
        }
        let vmax = self.cfg.max_speed_m_per_s;
        if [s.vx_c, s.vz_c, s.vx_b, s.vz_b].iter().any(|v| v.abs() > vmax) {
            return bad("speed beyond sanity bound");
        }
        if s.z_b.abs() > self.cfg.max_abs_z_m || s.z_c.abs() > self.cfg.max_abs_z_m {
            return bad("height beyond sanity bound");
        }
        if s.x_b > self.terrain.x0 + self.terrain.dx * self.terrain.heights.len() as f64 {
            return bad("blade left the terrain");
        }
        Ok(())
    }

    /// Integrates one substep and returns the measured link force.
    fn substep(&mut self, u: Controls, v_fee: [f64; 2], beta_pure: f64, dt: f64) -> Result<(ForceXZ, f64), SimError> {
        let c = self.cfg.clone();
        let s = self.state;
        let mb = c.blade_mass_kg;
        let lx = c.force_limit_x_n;
        let lz = c.force_limit_z_n;
        let default = self.spec.mode == SimMode::Default;

        let drive = (c.drive_gain_n_s_per_m * (u.u_x - s.vx_c)).clamp(-lx, lx);
        let link_x = (c.link_x_stiffness_n_per_m * (s.x_c + c.blade_offset_m - s.x_b) + c.link_x_damping_n_s_per_m * (s.vx_c - s.vx_b))
            .clamp(-lx, lx);
        let z_target = s.z_c + u.u_zr;
        let link_z = (c.link_z_stiffness_n_per_m * (z_target - s.z_b) + c.link_z_damping_n_s_per_m * (s.vz_c - s.vz_b)).clamp(-lz, lz);
        let dist = if default { self.disturbance() } else { [0.0, 0.0] };

        let d = self.depth_of_cut();
        let q = self.surcharge_force();
        let pile_down = if default { c.pile_load_fraction * q } else { 0.0 };
        let mut vx = s.vx_b + dt * (link_x + dist[0]) / mb;
        let mut vz = s.vz_b + dt * (link_z - mb * GRAVITY + dist[1] - pile_down) / mb;

        let beta = if default { self.beta_for(d, v_fee, q) } else { beta_pure };
        let q_fee = c.effective_surcharge(self.spec.mode, q);
        let threshold = if d > 0.0 { soil::fee_threshold(&self.soil.params, &self.tool, d, q_fee, v_fee, beta) } else { None };
        let th_x = threshold.map_or(0.0, |t| t.0.f_x);
        let cap = mb / dt;
        let r = soil_reaction(threshold, d, [vx, vz], cap);
        vx += dt * r.force.f_x / mb;
        vz += dt * r.force.f_z / mb;

        if default {
            // the pile is dragged along the ground ahead of the blade
            if q > 0.0 && vx > 0.0 {
                vx -= dt * (c.pile_drag_coeff * q).min(cap * vx) / mb;
            }
            if d > 0.0 {
                let p = &self.soil.params;
                let bearing = soil::bearing_pressure(p.phi, p.c, p.gamma, d, c.edge_thickness_m) * c.edge_thickness_m * self.tool.w;
                let friction = c.contact_friction_coeff * r.force.f_x.abs();
                if vz < 0.0 {
                    vz += dt * (bearing + friction).min(cap * -vz) / mb;
                } else {
                    vz -= dt * friction.min(cap * vz) / mb;
                }
            }
        }

        let mut n = self.state;
        n.vx_b = vx;
        n.vz_b = vz;
        n.x_b += dt * vx;
        n.z_b += dt * vz;
        n.vx_c += dt * (drive - link_x) / c.chassis_mass_kg;
        n.x_c += dt * n.vx_c;
        let w = std::f64::consts::TAU * c.suspension_hz;
        let ground = self.ground_under_chassis();
        n.vz_c += dt * (w * w * (ground - s.z_c) - 2.0 * w * s.vz_c);
        n.z_c += dt * n.vz_c;

        let advance = n.x_b - s.x_b;
        if d > 0.0 && advance > 0.0 {
            let area = self.terrain.cut(s.x_b, n.x_b, n.z_b);
            let mass = area * self.tool.w * self.soil.params.gamma / GRAVITY;
            self.ledger.removed += mass;
            if default {
                self.ledger.surcharge += mass;
                self.maybe_shear_event(advance, d, beta, th_x);
            } else {
                self.ledger.spilled += mass;
            }
        }
        if default && self.ledger.surcharge > 0.0 {
            let cap_mass = c.pile_capacity_m2 * self.tool.w * self.soil.params.gamma / GRAVITY;
            let spill = (self.ledger.surcharge * c.spill_rate_per_s * dt).max(self.ledger.surcharge - cap_mass).min(self.ledger.surcharge);
            self.ledger.surcharge -= spill;
            self.ledger.spilled += spill;
        }

        self.state = n;
        self.t += dt;
        Ok((ForceXZ::new(link_x, link_z - mb * GRAVITY), beta))
    }

    /// Advances one control step and returns its table row.
    pub fn control_step(&mut self) -> Result<StepRow, SimError> {
        let cfg = self.cfg.clone();
        let dt = 1.0 / (cfg.control_hz * cfg.substeps as f64);
        let e_vx = self.spec.v_target - self.state.vx_c;
        let u_za = anti_stall_update(&mut self.controller, e_vx);
        let u_zr = (u_za - self.state.z_c).clamp(-cfg.blade_reach_below_m, cfg.blade_reach_above_m);
        let u = Controls { u_x: self.spec.v_target, u_zr };
        let v_fee = self.filtered_velocity();
        let beta_pure = match self.spec.mode {
            SimMode::FeePure => self.beta_for(self.depth_of_cut(), v_fee, 0.0),
            SimMode::Default => 0.0,
        };
        let t0 = self.t;
        let mut last = (ForceXZ::default(), beta_pure);
        for _ in 0..cfg.substeps {
            last = self.substep(u, v_fee, beta_pure, dt)?;
            self.check()?;
        }
        self.t = t0 + 1.0 / cfg.control_hz;
        let (f, beta) = last;
        let s = self.state;
        if self.filter.len() == cfg.velocity_filter_len {
            self.filter.pop_front();
        }
        self.filter.push_back([s.vx_c, s.vz_b]);
        let p = self.soil.params;
        let row = StepRow {
            step: self.step,
            t: self.t,
            p_x_b: s.x_b,
            p_z_b: s.z_b,
            p_z_c: s.z_c,
            v_x_c: s.vx_c,
            v_z_b: s.vz_b,
            v_z_c: s.vz_c,
            u_zr,
            u_za,
            u_x: u.u_x,
            f_x: f.f_x,
            f_z: f.f_z,
            phi: p.phi,
            c: p.c,
            delta: p.delta,
            c_a: p.c_a,
            gamma: p.gamma,
            rho: self.tool.rho,
            alpha: self.tool.alpha,
            w: self.tool.w,
            d: self.depth_of_cut(),
            q: self.surcharge_force(),
            v_x: v_fee[0],
            v_z: v_fee[1],
            beta,
            ctrl_offset: self.controller.offset,
            vel_error: e_vx,
        };
        self.step += 1;
        Ok(row)
    }

    pub fn meta(&self) -> EpisodeMeta {
        EpisodeMeta {
            spec: self.spec,
            soil: self.soil,
            steps: self.cfg.steps(),
            control_hz: self.cfg.control_hz,
            offset_limit: self.controller.offset_limit(),
            e_vmin: self.controller.e_vmin(),
        }
    }
}

/// Runs a full episode from rest.
pub fn run_episode(cfg: &SimConfig, spec: &EpisodeSpec) -> Result<EpisodeRecord, SimError> {
    let mut sim = Simulator::new(cfg, spec)?;
    let rows = (0..cfg.steps()).map(|_| sim.control_step()).collect::<Result<Vec<_>, _>>()?;
    Ok(EpisodeRecord { meta: sim.meta(), rows })
}
