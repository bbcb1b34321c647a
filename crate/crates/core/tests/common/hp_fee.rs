//! Wedge force evaluated in 256-bit floating point.
//!
//! Written against the textbook formulas only; shares no code with the
//! library. Inputs are plain `f64` values, so both sides see exactly the same
//! arguments and any difference is rounding in the library.

#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Hp {
    cc: Consts,
}

/// Arguments of the high-precision evaluation, angles in radians.
#[derive(Debug, Clone, Copy)]
pub struct HpTheta {
    pub phi: f64,
    pub c: f64,
    pub delta: f64,
    pub c_a: f64,
    pub gamma: f64,
    pub rho: f64,
    pub alpha: f64,
    pub w: f64,
    pub d_prime: f64,
    pub q: f64,
    pub ib_dot_v: f64,
    pub c1: f64,
    pub beta: f64,
}

impl Default for Hp {
    fn default() -> Self {
        Self::new()
    }
}

impl Hp {
    pub fn new() -> Self {
        Self { cc: Consts::new().expect("constants cache") }
    }

    fn f(&self, x: f64) -> BigFloat {
        BigFloat::from_f64(x, P)
    }

    fn sin(&mut self, x: &BigFloat) -> BigFloat {
        x.sin(P, RM, &mut self.cc)
    }

    fn cos(&mut self, x: &BigFloat) -> BigFloat {
        x.cos(P, RM, &mut self.cc)
    }

    pub fn to_f64(x: &BigFloat) -> f64 {
        format!("{x}").parse().expect("decimal rendering of a finite value")
    }

    fn velocity_factor(&mut self, t: &HpTheta) -> BigFloat {
        let arg = self.f(-t.c1).mul(&self.f(t.ib_dot_v), P, RM);
        arg.tanh(P, RM, &mut self.cc)
    }

    /// `[N_γ, N_c, N_Q, N_a]` at high precision.
    pub fn coefficients_big(&mut self, t: &HpTheta) -> [BigFloat; 4] {
        let s = self.velocity_factor(t);
        let delta_eff = s.mul(&self.f(t.delta), P, RM);
        let (phi, rho, alpha, beta) = (self.f(t.phi), self.f(t.rho), self.f(t.alpha), self.f(t.beta));
        let eta = delta_eff.add(&rho, P, RM).add(&phi, P, RM).add(&beta, P, RM);
        let sin_eta = self.sin(&eta);
        let sin_rho = self.sin(&rho);
        let sin_beta = self.sin(&beta);
        let cot_rho = self.cos(&rho).div(&sin_rho, P, RM);
        let cot_beta = self.cos(&beta).div(&sin_beta, P, RM);
        let apb = alpha.add(&phi, P, RM).add(&beta, P, RM);
        let s_apb = self.sin(&apb);
        let two = self.f(2.0);

        let n_gamma = cot_rho.add(&cot_beta, P, RM).mul(&s_apb, P, RM).div(&two.mul(&sin_eta, P, RM), P, RM);
        let n_c = self.cos(&phi).div(&sin_beta.mul(&sin_eta, P, RM), P, RM);
        let n_q = s_apb.div(&sin_eta, P, RM);
        let rpb = rho.add(&phi, P, RM).add(&beta, P, RM);
        let n_a = self.cos(&rpb).neg().div(&sin_rho.mul(&sin_eta, P, RM), P, RM);
        [n_gamma, n_c, n_q, n_a]
    }

    pub fn coefficients(&mut self, t: &HpTheta) -> [f64; 4] {
        self.coefficients_big(t).map(|x| Self::to_f64(&x))
    }

    /// The four force terms before summation and clamping.
    pub fn terms(&mut self, t: &HpTheta) -> [f64; 4] {
        let [ng, nc, nq, na] = self.coefficients_big(t);
        let s = self.velocity_factor(t);
        let (d, w) = (self.f(t.d_prime), self.f(t.w));
        let g_term = self.f(t.gamma).mul(&d, P, RM).mul(&d, P, RM).mul(&w, P, RM).mul(&ng, P, RM);
        let c_term = self.f(t.c).mul(&d, P, RM).mul(&w, P, RM).mul(&nc, P, RM);
        let q_term = self.f(t.q).mul(&nq, P, RM);
        let a_term = s.mul(&self.f(t.c_a), P, RM).mul(&w, P, RM).mul(&na, P, RM);
        [g_term, c_term, q_term, a_term].map(|x| Self::to_f64(&x))
    }

    /// Clamped scalar force.
    pub fn force(&mut self, t: &HpTheta) -> f64 {
        let [ng, nc, nq, na] = self.coefficients_big(t);
        let s = self.velocity_factor(t);
        let (d, w) = (self.f(t.d_prime), self.f(t.w));
        let total = self
            .f(t.gamma)
            .mul(&d, P, RM)
            .mul(&d, P, RM)
            .mul(&w, P, RM)
            .mul(&ng, P, RM)
            .add(&self.f(t.c).mul(&d, P, RM).mul(&w, P, RM).mul(&nc, P, RM), P, RM)
            .add(&self.f(t.q).mul(&nq, P, RM), P, RM)
            .add(&s.mul(&self.f(t.c_a), P, RM).mul(&w, P, RM).mul(&na, P, RM), P, RM);
        Self::to_f64(&total).max(0.0)
    }
}

/// Plain-`f64` `N_γ` for the exhaustive grid scan; NaN once η has passed π.
pub fn n_gamma_f64(phi: f64, delta_eff: f64, rho: f64, alpha: f64, beta: f64) -> f64 {
    let eta = delta_eff + rho + phi + beta;
    if eta >= std::f64::consts::PI {
        return f64::NAN;
    }
    (1.0 / rho.tan() + 1.0 / beta.tan()) * (alpha + phi + beta).sin() / (2.0 * eta.sin())
}

/// Minimizer of `N_γ` over `[lo, hi]` on a uniform grid with the given step.
pub fn grid_argmin(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=n {
        let b = if i == n { hi } else { lo + step * i as f64 };
        let v = f(b);
        if v.is_finite() && v < best.1 {
            best = (b, v);
        }
    }
    best
}
