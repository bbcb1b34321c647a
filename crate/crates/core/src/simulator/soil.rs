//! Soil material model, heightfield terrain and the blade-soil reaction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::fee::{self, CutState, FeeTheta, ForceXZ, SoilParams, ToolGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoilType {
    Clay,
    Loam,
    Sand,
    Gravel,
}

impl SoilType {
    pub const ALL: [SoilType; 4] = [SoilType::Clay, SoilType::Loam, SoilType::Sand, SoilType::Gravel];

    pub fn name(self) -> &'static str {
        match self {
            SoilType::Clay => "clay",
            SoilType::Loam => "loam",
            SoilType::Sand => "sand",
            SoilType::Gravel => "gravel",
        }
    }

    pub fn is_cohesive(self) -> bool {
        matches!(self, SoilType::Clay | SoilType::Loam)
    }
}

impl fmt::Display for SoilType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SoilType {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clay" => Ok(SoilType::Clay),
            "loam" => Ok(SoilType::Loam),
            "sand" => Ok(SoilType::Sand),
            "gravel" => Ok(SoilType::Gravel),
            _ => Err(SimError::UnknownSoilType(s.to_string())),
        }
    }
}

/// Property values at `I_d = 0` and `I_d = 100`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilEndpoints {
    pub phi_deg: [f64; 2],
    pub c_kpa: [f64; 2],
    pub gamma_kn_per_m3: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilTable {
    pub clay: SoilEndpoints,
    pub loam: SoilEndpoints,
    pub sand: SoilEndpoints,
    pub gravel: SoilEndpoints,
}

impl Default for SoilTable {
    fn default() -> Self {
        Self {
            clay: SoilEndpoints { phi_deg: [17.0, 25.0], c_kpa: [3.0, 10.0], gamma_kn_per_m3: [14.0, 19.0] },
            loam: SoilEndpoints { phi_deg: [20.0, 32.0], c_kpa: [2.0, 8.0], gamma_kn_per_m3: [13.0, 18.0] },
            sand: SoilEndpoints { phi_deg: [28.0, 42.0], c_kpa: [0.0, 0.0], gamma_kn_per_m3: [14.0, 19.0] },
            gravel: SoilEndpoints { phi_deg: [32.0, 45.0], c_kpa: [0.0, 0.0], gamma_kn_per_m3: [16.0, 21.0] },
        }
    }
}

impl SoilTable {
    pub fn get(&self, t: SoilType) -> &SoilEndpoints {
        match t {
            SoilType::Clay => &self.clay,
            SoilType::Loam => &self.loam,
            SoilType::Sand => &self.sand,
            SoilType::Gravel => &self.gravel,
        }
    }
}

/// Density-driven soil properties in SI units (rad, Pa, N/m³).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityProps {
    pub phi: f64,
    pub c: f64,
    pub gamma: f64,
}

fn lerp(e: [f64; 2], s: f64) -> f64 {
    if s == 1.0 {
        e[1]
    } else {
        e[0] + (e[1] - e[0]) * s
    }
}

/// Linear interpolation of (φ, c, γ) between the type's endpoints.
pub fn soil_props_from_density(t: SoilType, relative_density: f64, table: &SoilTable) -> Result<DensityProps, SimError> {
    if !(0.0..=100.0).contains(&relative_density) {
        return Err(SimError::InvalidDensity(relative_density));
    }
    let e = table.get(t);
    let s = relative_density / 100.0;
    let c = if t.is_cohesive() { lerp(e.c_kpa, s) * 1e3 } else { 0.0 };
    Ok(DensityProps { phi: lerp(e.phi_deg, s).to_radians(), c, gamma: lerp(e.gamma_kn_per_m3, s) * 1e3 })
}

/// Everything the simulator needs to know about the ground it is cutting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilConfig {
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub params: SoilParams,
}

/// Uniform-spacing terrain profile along x. Cell `i` is centred at
/// `x0 + (i + 0.5) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    pub x0: f64,
    pub dx: f64,
    pub heights: Vec<f64>,
}

impl Heightfield {
    pub fn flat(x0: f64, length: f64, dx: f64) -> Self {
        let n = (length / dx).ceil() as usize;
        Self { x0, dx, heights: vec![0.0; n] }
    }

    fn center(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.dx
    }

    /// Linear interpolation between cell centres, clamped at both ends.
    pub fn height_at(&self, x: f64) -> f64 {
        let u = (x - self.x0) / self.dx - 0.5;
        if u <= 0.0 {
            return self.heights[0];
        }
        let i = u.floor() as usize;
        if i + 1 >= self.heights.len() {
            return *self.heights.last().expect("non-empty heightfield");
        }
        let f = u - i as f64;
        self.heights[i] * (1.0 - f) + self.heights[i + 1] * f
    }

    /// Height of the first cell whose centre lies strictly ahead of `x`.
    pub fn surface_ahead(&self, x: f64) -> f64 {
        let i = ((x - self.x0) / self.dx - 0.5).floor() + 1.0;
        let i = (i.max(0.0) as usize).min(self.heights.len() - 1);
        let i = if self.center(i) <= x { (i + 1).min(self.heights.len() - 1) } else { i };
        self.heights[i]
    }

    /// Lowers every cell centred in `(from, to]` to `z`; returns the removed
    /// cross-section area, m².
    pub fn cut(&mut self, from: f64, to: f64, z: f64) -> f64 {
        if to <= from {
            return 0.0;
        }
        let first = ((from - self.x0) / self.dx - 0.5).floor().max(0.0) as usize;
        let mut area = 0.0;
        for i in first..self.heights.len() {
            let xc = self.center(i);
            if xc > to {
                break;
            }
            if xc > from && self.heights[i] > z {
                area += (self.heights[i] - z) * self.dx;
                self.heights[i] = z;
            }
        }
        area
    }

    /// Cross-section area currently above `z = 0` subtracted from the
    /// untouched flat ground, m².
    pub fn deficit(&self) -> f64 {
        self.heights.iter().map(|h| -h.min(0.0)).sum::<f64>() * self.dx
    }
}

/// Shear threshold of the intact soil ahead of the blade; the force the blade
/// must apply to the soil before it fails. `None` when the wedge is singular.
pub fn fee_threshold(soil: &SoilParams, tool: &ToolGeometry, d: f64, q: f64, v: [f64; 2], beta: f64) -> Option<(ForceXZ, FeeTheta)> {
    let theta = FeeTheta {
        soil: *soil,
        tool: *tool,
        cut: CutState { d, q, v, i_b: tool.blade_up() },
        beta,
        delta_d: 0.0,
    };
    fee::fee_force_xz(&theta).ok().map(|f| (f, theta))
}

/// Failure angle whose wedge top matches the extent of a surcharge pile of
/// weight `q` resting at the repose angle.
pub fn surcharge_extent_beta(q: f64, gamma: f64, w: f64, d: f64, rho: f64, repose: f64, interval: (f64, f64)) -> f64 {
    if d <= 0.0 || q <= 0.0 || gamma <= 0.0 || w <= 0.0 {
        return interval.1;
    }
    let area = q / (gamma * w);
    let length = (2.0 * area / repose.tan()).sqrt();
    let cot_beta = length / d - 1.0 / rho.tan();
    if cot_beta <= 0.0 {
        return interval.1;
    }
    (1.0 / cot_beta).atan().clamp(interval.0, interval.1)
}

/// Terzaghi bearing capacity of a strip footing of width `b` at depth `d`, Pa.
pub fn bearing_pressure(phi: f64, c: f64, gamma: f64, d: f64, b: f64) -> f64 {
    let nq = (std::f64::consts::PI * phi.tan()).exp() * (std::f64::consts::FRAC_PI_4 + 0.5 * phi).tan().powi(2);
    let nc = if phi > 1e-6 { (nq - 1.0) / phi.tan() } else { 5.14 };
    let ng = 2.0 * (nq + 1.0) * phi.tan();
    c * nc + gamma * d.max(0.0) * nq + 0.5 * gamma * b * ng
}
