//! Normalization ranges and hard limits of the force-model parameters.
//!
//! Angles are stored in radians; the degree values below are converted once.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamRange {
    pub name: &'static str,
    /// Min-max normalization range `[lo, hi]`.
    pub norm: (f64, f64),
    /// Hard lower limit, if any.
    pub lower: Option<f64>,
    /// Hard upper limit, if any.
    pub upper: Option<f64>,
}

impl ParamRange {
    const fn new(name: &'static str, norm: (f64, f64), lower: Option<f64>, upper: Option<f64>) -> Self {
        Self { name, norm, lower, upper }
    }

    fn degrees(name: &'static str, norm: (f64, f64), lower: Option<f64>, upper: Option<f64>) -> Self {
        Self {
            name,
            norm: (norm.0.to_radians(), norm.1.to_radians()),
            lower: lower.map(f64::to_radians),
            upper: upper.map(f64::to_radians),
        }
    }

    pub fn width(&self) -> f64 {
        self.norm.1 - self.norm.0
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.norm.0) / self.width()
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.norm.0 + y * self.width()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let x = self.lower.map_or(x, |lo| x.max(lo));
        self.upper.map_or(x, |hi| x.min(hi))
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower.is_none_or(|lo| x >= lo) && self.upper.is_none_or(|hi| x <= hi)
    }

    /// `max(0, lo − x) + max(0, x − hi)` in physical units.
    pub fn violation(&self, x: f64) -> f64 {
        self.lower.map_or(0.0, |lo| (lo - x).max(0.0)) + self.upper.map_or(0.0, |hi| (x - hi).max(0.0))
    }
}

/// The full parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamTable {
    pub phi: ParamRange,
    pub c: ParamRange,
    pub delta: ParamRange,
    pub c_a: ParamRange,
    pub gamma: ParamRange,
    pub rho: ParamRange,
    pub alpha: ParamRange,
    pub w: ParamRange,
    pub d_prime: ParamRange,
    pub delta_d: ParamRange,
    pub q: ParamRange,
    pub v_x: ParamRange,
    pub v_z: ParamRange,
    pub beta: ParamRange,
    pub dngamma_dbeta: ParamRange,
    pub eta: ParamRange,
    pub zeta: ParamRange,
}

impl Default for ParamTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl ParamTable {
    pub fn standard() -> Self {
        let r = ParamRange::new;
        let g = ParamRange::degrees;
        Self {
            phi: g("phi", (17.0, 45.0), Some(0.0), Some(90.0)),
            c: r("c", (0.0, 10e3), Some(0.0), None),
            delta: g("delta", (11.0, 35.0), Some(0.0), Some(90.0)),
            c_a: r("c_a", (0.0, 10e3), Some(0.0), None),
            gamma: r("gamma", (14e3, 22e3), Some(0.0), None),
            rho: g("rho", (2.0, 178.0), Some(2.0), Some(178.0)),
            alpha: g("alpha", (-10.0, 10.0), Some(-30.0), Some(30.0)),
            w: r("w", (0.0, 3.164), Some(0.0), Some(3.164)),
            d_prime: r("d_prime", (0.0, 0.3), Some(0.0), Some(0.660)),
            delta_d: r("delta_d", (-5e-2, 5e-2), Some(-5e-2), Some(5e-2)),
            q: r("q", (0.0, 10e3), Some(0.0), None),
            v_x: r("v_x", (0.0, 1.0), Some(-2.0), Some(2.0)),
            v_z: r("v_z", (-1.0, 1.0), Some(-2.0), Some(2.0)),
            beta: g("beta", (11.5, 34.5), Some(11.5), Some(34.5)),
            dngamma_dbeta: r("dngamma_dbeta", (-10.0, 10.0), None, None),
            eta: g("eta", (2.0, 178.0), Some(2.0), Some(178.0)),
            zeta: g("zeta", (11.0, 35.0), Some(0.0), None),
        }
    }

    /// The β search interval used by the failure-angle solver.
    pub fn beta_interval(&self) -> (f64, f64) {
        self.beta.norm
    }
}
