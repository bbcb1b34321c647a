//! The wedge force model as graph operations.
//!
//! Every operation is ordered exactly like [`crate::fee`], so for valid
//! inputs the forward values are bit-identical to the scalar model.

use std::f64::consts::FRAC_PI_2;

use super::KnownParams;
use crate::diffnet::{DiffError, Graph, Tensor, Unary, Var};

/// Outputs of [`fee_layer`], each `[batch, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct FeeVars {
    pub f: Var,
    pub fx: Var,
    pub fz: Var,
    pub eta: Var,
    pub d_prime: Var,
    pub delta_eff: Var,
}

fn column(g: &mut Graph, known: &[KnownParams], f: impl Fn(&KnownParams) -> f64) -> Var {
    g.input(Tensor::column(known.iter().map(f).collect()))
}

fn cot(g: &mut Graph, x: Var) -> Result<Var, DiffError> {
    let c = g.cos(x);
    let s = g.sin(x);
    g.div(c, s)
}

/// Force on the soil for unknowns given as `[batch, 1]` columns in physical units.
pub fn fee_layer(g: &mut Graph, known: &[KnownParams], phi: Var, c: Var, delta: Var, beta: Var, delta_d: Var) -> Result<FeeVars, DiffError> {
    let s = column(g, known, |k| k.velocity_factor());
    let rho = column(g, known, |k| k.rho);
    let alpha = column(g, known, |k| k.alpha);
    let cot_rho = column(g, known, |k| k.rho.cos() / k.rho.sin());
    let sin_rho = column(g, known, |k| k.rho.sin());
    let d = column(g, known, |k| k.d);
    let w = column(g, known, |k| k.w);
    let gamma = column(g, known, |k| k.gamma);
    let q = column(g, known, |k| k.q);
    let ca_w = column(g, known, |k| k.velocity_factor() * k.c_a * k.w);
    let half_pi_minus_rho = column(g, known, |k| FRAC_PI_2 - k.rho);

    let delta_eff = g.mul(s, delta)?;
    let eta = g.add(delta_eff, rho)?;
    let eta = g.add(eta, phi)?;
    let eta = g.add(eta, beta)?;
    let sin_eta = g.sin(eta);

    let apb = g.add(alpha, phi)?;
    let apb = g.add(apb, beta)?;
    let s_apb = g.sin(apb);

    let cot_beta = cot(g, beta)?;
    let n_gamma = g.add(cot_rho, cot_beta)?;
    let n_gamma = g.mul(n_gamma, s_apb)?;
    let two_sin_eta = g.scale(sin_eta, 2.0);
    let n_gamma = g.div(n_gamma, two_sin_eta)?;

    let cos_phi = g.cos(phi);
    let sin_beta = g.sin(beta);
    let den = g.mul(sin_beta, sin_eta)?;
    let n_c = g.div(cos_phi, den)?;

    let n_q = g.div(s_apb, sin_eta)?;

    let rpb = g.add(rho, phi)?;
    let rpb = g.add(rpb, beta)?;
    let cos_rpb = g.cos(rpb);
    let neg = g.scale(cos_rpb, -1.0);
    let den = g.mul(sin_rho, sin_eta)?;
    let n_a = g.div(neg, den)?;

    let dp = g.add(d, delta_d)?;
    let d_prime = g.relu(dp);

    let t1 = g.mul(gamma, d_prime)?;
    let t1 = g.mul(t1, d_prime)?;
    let t1 = g.mul(t1, w)?;
    let t1 = g.mul(t1, n_gamma)?;
    let t2 = g.mul(c, d_prime)?;
    let t2 = g.mul(t2, w)?;
    let t2 = g.mul(t2, n_c)?;
    let t3 = g.mul(q, n_q)?;
    let t4 = g.mul(ca_w, n_a)?;
    let raw = g.add(t1, t2)?;
    let raw = g.add(raw, t3)?;
    let raw = g.add(raw, t4)?;
    let f = g.relu(raw);

    let psi = g.sub(half_pi_minus_rho, delta_eff)?;
    let psi = g.add(psi, alpha)?;
    let cos_psi = g.cos(psi);
    let sin_psi = g.sin(psi);
    let fx = g.mul(f, cos_psi)?;
    let fz = g.mul(f, sin_psi)?;
    Ok(FeeVars { f, fx, fz, eta, d_prime, delta_eff })
}

/// `∂N_γ/∂β` as graph operations, `[batch, 1]`.
///
/// Callers pass stopped copies of every angle except β so the result only
/// ever pushes on β.
pub fn dngamma_layer(g: &mut Graph, known: &[KnownParams], phi: Var, delta_eff: Var, beta: Var) -> Result<Var, DiffError> {
    let rho = column(g, known, |k| k.rho);
    let alpha = column(g, known, |k| k.alpha);
    let cot_rho = column(g, known, |k| k.rho.cos() / k.rho.sin());
    let eta = g.add(delta_eff, rho)?;
    let eta = g.add(eta, phi)?;
    let eta = g.add(eta, beta)?;

    let cot_beta = cot(g, beta)?;
    let a = g.add(cot_rho, cot_beta)?;
    let sin_beta = g.sin(beta);
    let sb2 = g.mul(sin_beta, sin_beta)?;
    let inv = g.unary(sb2, Unary::Recip);
    let da = g.scale(inv, -1.0);
    let apb = g.add(alpha, phi)?;
    let apb = g.add(apb, beta)?;
    let s = g.sin(apb);
    let ds = g.cos(apb);
    let e = g.sin(eta);
    let de = g.cos(eta);

    let t1 = g.mul(da, s)?;
    let t1 = g.mul(t1, e)?;
    let t2 = g.mul(a, ds)?;
    let t2 = g.mul(t2, e)?;
    let t3 = g.mul(a, s)?;
    let t3 = g.mul(t3, de)?;
    let num = g.add(t1, t2)?;
    let num = g.sub(num, t3)?;
    let e2 = g.mul(e, e)?;
    let den = g.scale(e2, 2.0);
    g.div(num, den)
}
