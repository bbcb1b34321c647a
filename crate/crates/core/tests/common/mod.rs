#![allow(dead_code)]

pub mod hp_fee;

use rand::Rng;
use soil_pinn::fee::{fee_coefficients, CutState, FeeTheta, SoilParams, ToolGeometry};
use soil_pinn::limits::ParamTable;

pub fn uniform(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    rng.random_range(r.0..=r.1)
}

/// A θ drawn uniformly from the normalization ranges, rejected until every
/// coefficient is finite and η sits inside its limits.
pub fn sample_theta(rng: &mut impl Rng) -> FeeTheta {
    let t = ParamTable::standard();
    loop {
        let tool = ToolGeometry { rho: uniform(rng, t.rho.norm), alpha: uniform(rng, t.alpha.norm), w: uniform(rng, t.w.norm) };
        let theta = FeeTheta {
            soil: SoilParams {
                phi: uniform(rng, t.phi.norm),
                c: uniform(rng, t.c.norm),
                delta: uniform(rng, t.delta.norm),
                c_a: uniform(rng, t.c_a.norm),
                gamma: uniform(rng, t.gamma.norm),
            },
            tool,
            cut: CutState {
                d: uniform(rng, t.d_prime.norm),
                q: uniform(rng, t.q.norm),
                v: [uniform(rng, t.v_x.norm), uniform(rng, t.v_z.norm)],
                i_b: tool.blade_up(),
            },
            beta: uniform(rng, t.beta.norm),
            delta_d: 0.0,
        };
        let eta = theta.eta();
        if fee_coefficients(&theta).is_ok() && t.eta.contains(eta) {
            return theta;
        }
    }
}

pub fn to_hp(t: &FeeTheta) -> hp_fee::HpTheta {
    hp_fee::HpTheta {
        phi: t.soil.phi,
        c: t.soil.c,
        delta: t.soil.delta,
        c_a: t.soil.c_a,
        gamma: t.soil.gamma,
        rho: t.tool.rho,
        alpha: t.tool.alpha,
        w: t.tool.w,
        d_prime: t.depth(),
        q: t.cut.q,
        ib_dot_v: t.cut.i_b[0] * t.cut.v[0] + t.cut.i_b[1] * t.cut.v[1],
        c1: soil_pinn::fee::C1,
        beta: t.beta,
    }
}

/// Like [`sample_theta`], but η stays inside its limits across the whole β
/// interval, which is what the failure-angle solver presumes.
pub fn sample_theta_full_beta(rng: &mut impl Rng) -> FeeTheta {
    let t = ParamTable::standard();
    let (lo, hi) = t.beta_interval();
    loop {
        let theta = sample_theta(rng);
        if t.eta.contains(theta.with_beta(lo).eta()) && t.eta.contains(theta.with_beta(hi).eta()) {
            return theta;
        }
    }
}
