//! Loss terms, all on normalized values.

use super::fee_layer::{dngamma_layer, fee_layer, FeeVars};
use super::{KnownParams, LossWeights, Normalizer, HEAD_DIM};
use crate::diffnet::{DiffError, Graph, Tensor, Var};
use crate::limits::{ParamRange, ParamTable};

/// Normalized limit violation `relu(y − u) + relu(l − y)` of a physical value.
///
/// Computed with the same operations the graph uses, so the two agree exactly.
pub fn limit_violation(r: &ParamRange, x: f64) -> f64 {
    let inv = 1.0 / r.width();
    let y = (x + -r.norm.0) * inv;
    let mut v = 0.0;
    if let Some(hi) = r.upper {
        let u = (hi + -r.norm.0) * inv;
        v += (y + -u).max(0.0);
    }
    if let Some(lo) = r.lower {
        let l = (lo + -r.norm.0) * inv;
        v += (-y + l).max(0.0);
    }
    v
}

fn violation_var(g: &mut Graph, r: &ParamRange, x: Var) -> Result<Option<Var>, DiffError> {
    let inv = 1.0 / r.width();
    let y = g.offset(x, -r.norm.0);
    let y = g.scale(y, inv);
    let mut out: Option<Var> = None;
    if let Some(hi) = r.upper {
        let u = (hi + -r.norm.0) * inv;
        let over = g.offset(y, -u);
        out = Some(g.relu(over));
    }
    if let Some(lo) = r.lower {
        let l = (lo + -r.norm.0) * inv;
        let neg = g.scale(y, -1.0);
        let under = g.offset(neg, l);
        let under = g.relu(under);
        out = Some(match out {
            Some(o) => g.add(o, under)?,
            None => under,
        });
    }
    Ok(out)
}

/// Graph nodes of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossParts {
    /// Raw normalized head output.
    pub head: Var,
    pub total: Var,
    pub force: Var,
    pub residual: Var,
    pub limits: Var,
    pub delta_d: Var,
    pub dngamma: Var,
    /// Physical unknowns after clipping, `[batch, 1]` each: φ, c, δ, β, Δd.
    pub clipped: [Var; 5],
    /// Residual force head, normalized, `[batch, 1]` each.
    pub residual_xz: [Var; 2],
    pub fee: FeeVars,
    /// Predicted force in N, `[batch, 1]` each.
    pub f_hat: [Var; 2],
    /// Samples that take part in the force and ∂N_γ/∂β terms.
    pub force_mask: Vec<bool>,
    /// Samples with positive augmented depth.
    pub residual_mask: Vec<bool>,
}

/// Scalar values of a [`LossParts`].
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub force: f64,
    pub residual: f64,
    pub limits: f64,
    pub delta_d: f64,
    pub dngamma: f64,
}

impl LossParts {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            total: g.value(self.total).item(),
            force: g.value(self.force).item(),
            residual: g.value(self.residual).item(),
            limits: g.value(self.limits).item(),
            delta_d: g.value(self.delta_d).item(),
            dngamma: g.value(self.dngamma).item(),
        }
    }
}

/// Weighted mean over the masked samples; zero if the mask is empty.
fn masked_mean(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var, DiffError> {
    let n = mask.iter().filter(|&&m| m).count();
    let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    g.weighted_sum(x, mask.iter().map(|&m| if m { w } else { 0.0 }).collect())
}

/// Builds every loss term from the raw normalized head output `[batch, 7]`
/// (φ, c, δ, β, Δd, r_x, r_z). `target` is the measured force in N.
pub fn loss_from_head(
    g: &mut Graph,
    head: Var,
    known: &[KnownParams],
    target: Option<&[[f64; 2]]>,
    norm: &Normalizer,
    weights: &LossWeights,
) -> Result<LossParts, DiffError> {
    let t = ParamTable::standard();
    let b = known.len();
    if g.value(head).shape != [b, HEAD_DIM] {
        return Err(DiffError::Shape(format!("head output {:?} for batch {b}", g.value(head).shape)));
    }
    let ranges = [t.phi, t.c, t.delta, t.beta, t.delta_d];
    let mut raw = Vec::with_capacity(5);
    let mut norm_cols = Vec::with_capacity(5);
    for (i, r) in ranges.iter().enumerate() {
        let y = g.slice_cols(head, i, i + 1)?;
        norm_cols.push(y);
        let x = g.scale(y, r.width());
        raw.push(g.offset(x, r.norm.0));
    }
    let clipped: Vec<Var> = ranges
        .iter()
        .zip(&raw)
        .map(|(r, &x)| g.clamp(x, r.lower.unwrap_or(f64::NEG_INFINITY), r.upper.unwrap_or(f64::INFINITY)))
        .collect();
    let rx = g.slice_cols(head, 5, 6)?;
    let rz = g.slice_cols(head, 6, 7)?;

    // masks from raw and clipped angles
    let s: Vec<f64> = known.iter().map(|k| k.velocity_factor()).collect();
    let raw_v = |g: &Graph, i: usize| g.value(raw[i]).data.clone();
    let clip_v = |g: &Graph, i: usize| g.value(clipped[i]).data.clone();
    let (rphi, rdelta, rbeta) = (raw_v(g, 0), raw_v(g, 2), raw_v(g, 3));
    let (cphi, cdelta, cbeta) = (clip_v(g, 0), clip_v(g, 2), clip_v(g, 3));
    let force_mask: Vec<bool> = (0..b)
        .map(|i| {
            let eta_raw = s[i] * rdelta[i] + known[i].rho + rphi[i] + rbeta[i];
            let eta_clip = s[i] * cdelta[i] + known[i].rho + cphi[i] + cbeta[i];
            t.beta.contains(rbeta[i]) && t.eta.contains(eta_raw) && t.eta.contains(eta_clip)
        })
        .collect();

    // masked samples see a harmless θ so that every value stays finite
    let safe = [t.phi, t.c, t.delta, t.beta, t.delta_d].map(|r| 0.5 * (r.norm.0 + r.norm.1));
    let mut used = [clipped[0]; 5];
    for i in 0..5 {
        let c = g.input(Tensor::column(vec![safe[i]; b]));
        used[i] = g.select(force_mask.clone(), clipped[i], c)?;
    }
    let fee = fee_layer(g, known, used[0], used[1], used[2], used[3], used[4])?;

    let rs = norm.residual_scale;
    let rx_n = g.scale(rx, rs);
    let rz_n = g.scale(rz, rs);
    let fx_hat = g.add(fee.fx, rx_n)?;
    let fz_hat = g.add(fee.fz, rz_n)?;

    let zero = g.input(Tensor::scalar(0.0));
    let force = match target {
        Some(target) => {
            let inv = 1.0 / norm.force_scale;
            let tx = g.input(Tensor::column(target.iter().map(|f| f[0]).collect()));
            let tz = g.input(Tensor::column(target.iter().map(|f| f[1]).collect()));
            let ex = g.sub(fx_hat, tx)?;
            let ex = g.abs(ex);
            let ex = g.scale(ex, inv * weights.force_axes[0] * 0.5);
            let ez = g.sub(fz_hat, tz)?;
            let ez = g.abs(ez);
            let ez = g.scale(ez, inv * weights.force_axes[1] * 0.5);
            let e = g.add(ex, ez)?;
            masked_mean(g, e, &force_mask)?
        }
        None => zero,
    };

    let residual_mask: Vec<bool> = g.value(fee.d_prime).data.iter().map(|&d| d > 0.0).collect();
    let arx = g.abs(rx);
    let arz = g.abs(rz);
    let ar = g.add(arx, arz)?;
    let ar = g.scale(ar, 0.5);
    let residual = masked_mean(g, ar, &residual_mask)?;

    // limit terms on raw values
    let rho = g.input(Tensor::column(known.iter().map(|k| k.rho).collect()));
    let sv = g.input(Tensor::column(s.clone()));
    let d_eff_raw = g.mul(sv, raw[2])?;
    let eta_raw = g.add(d_eff_raw, rho)?;
    let eta_raw = g.add(eta_raw, raw[0])?;
    let eta_raw = g.add(eta_raw, raw[3])?;
    let zeta = g.sub(raw[0], raw[2])?;
    let d = g.input(Tensor::column(known.iter().map(|k| k.d).collect()));
    let d_prime_raw = g.add(d, raw[4])?;
    let d_known_ok: Vec<bool> = known.iter().map(|k| t.d_prime.contains(k.d)).collect();
    let all = vec![true; b];
    let terms: [(ParamRange, Var, f64, &[bool]); 8] = [
        (t.phi, raw[0], weights.limit_phi, &all),
        (t.c, raw[1], weights.limit_c, &all),
        (t.delta, raw[2], weights.limit_delta, &all),
        (t.beta, raw[3], weights.limit_beta, &all),
        (t.eta, eta_raw, weights.limit_eta, &all),
        (t.zeta, zeta, weights.limit_zeta, &all),
        (t.delta_d, raw[4], weights.limit_delta_d, &all),
        (t.d_prime, d_prime_raw, weights.limit_d_prime, &d_known_ok),
    ];
    let mut limits = zero;
    for (r, x, lambda, mask) in terms {
        if let Some(v) = violation_var(g, &r, x)? {
            let m = masked_mean(g, v, mask)?;
            let m = g.scale(m, lambda);
            limits = g.add(limits, m)?;
        }
    }

    let centered = g.offset(norm_cols[4], -0.5);
    let sq = g.square(centered);
    let delta_d = g.mean(sq);

    // ∂N_γ/∂β pushes on β only
    let phi_sg = g.stop_gradient(used[0]);
    let de_sg = g.stop_gradient(fee.delta_eff);
    let dn = dngamma_layer(g, known, phi_sg, de_sg, used[3])?;
    let dn = g.abs(dn);
    let dn = g.scale(dn, weights.dngamma_weight / t.dngamma_dbeta.width());
    let dngamma = masked_mean(g, dn, &force_mask)?;

    let mut total = g.scale(force, weights.force);
    let r = g.scale(residual, weights.residual);
    total = g.add(total, r)?;
    total = g.add(total, limits)?;
    let dd = g.scale(delta_d, weights.delta_d_mse);
    total = g.add(total, dd)?;
    let dn = g.scale(dngamma, weights.dngamma_dbeta);
    total = g.add(total, dn)?;

    Ok(LossParts {
        head,
        total,
        force,
        residual,
        limits,
        delta_d,
        dngamma,
        clipped: [clipped[0], clipped[1], clipped[2], clipped[3], clipped[4]],
        residual_xz: [rx, rz],
        fee,
        f_hat: [fx_hat, fz_hat],
        force_mask,
        residual_mask,
    })
}
