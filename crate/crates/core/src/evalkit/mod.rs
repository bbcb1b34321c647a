//! Evaluation: force-error metrics, parameter aggregation by soil type and
//! relative density, and fixed-depth force curves.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datakit::SequenceSample;
use crate::estimator::{predict, EstimatedParams, EstimatorError, KnownParams, PinnModel, Prediction};
use crate::fee::{self, FeeError};
use crate::limits::ParamTable;
use crate::simulator::SoilType;

/// Per-axis force limits of the machine, N.
pub const MACHINE_LIMITS: [f64; 2] = [20e3, 30e3];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("no results to evaluate")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Estimate and ground truth for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: usize,
    pub window_index: usize,
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub known: KnownParams,
    pub truth: EstimatedParams,
    pub force: [f64; 2],
    pub prediction: Prediction,
}

pub fn evaluate_samples(model: &PinnModel, samples: &[SequenceSample]) -> Result<Vec<EvalRecord>, EvalError> {
    let pred = predict(model, samples)?;
    Ok(samples
        .iter()
        .zip(pred)
        .map(|(s, p)| EvalRecord {
            episode: s.episode,
            window_index: s.window_index,
            soil_type: s.soil_type,
            relative_density: s.relative_density,
            known: s.known,
            truth: s.truth,
            force: s.force,
            prediction: p,
        })
        .collect())
}

/// Mean and population variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Self { mean: f64::NAN, var: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, var }
    }
}

/// Moments of φ, c, δ, β, Δd in that order.
pub type ParamMoments = [Moments; 5];

fn moments(items: &[&EvalRecord], f: impl Fn(&EvalRecord) -> [f64; 5]) -> ParamMoments {
    std::array::from_fn(|j| Moments::of(items.iter().map(|r| f(r)[j])))
}

/// Statistics of one (soil type, relative density) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub count: usize,
    pub estimate: ParamMoments,
    pub truth: ParamMoments,
    /// Group means of the known parameters.
    pub known: KnownParams,
}

impl GroupStats {
    pub fn estimate_mean(&self) -> EstimatedParams {
        EstimatedParams::from_array(self.estimate.map(|m| m.mean))
    }

    pub fn truth_mean(&self) -> EstimatedParams {
        EstimatedParams::from_array(self.truth.map(|m| m.mean))
    }
}

/// Groups sorted by soil type, then relative density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedParams {
    pub groups: Vec<GroupStats>,
}

fn mean_known(items: &[&EvalRecord]) -> KnownParams {
    let n = items.len() as f64;
    let m = |f: fn(&KnownParams) -> f64| items.iter().map(|r| f(&r.known)).sum::<f64>() / n;
    KnownParams {
        c_a: m(|k| k.c_a),
        gamma: m(|k| k.gamma),
        rho: m(|k| k.rho),
        alpha: m(|k| k.alpha),
        w: m(|k| k.w),
        d: m(|k| k.d),
        q: m(|k| k.q),
        v: [m(|k| k.v[0]), m(|k| k.v[1])],
    }
}

/// Groups results by soil type and relative density. The result does not
/// depend on the order of `records`.
pub fn aggregate_parameters(records: &[EvalRecord]) -> AggregatedParams {
    let mut groups: BTreeMap<(SoilType, u64), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.soil_type, r.relative_density.to_bits())).or_default().push(r);
    }
    let groups = groups
        .into_iter()
        .map(|((soil_type, id), mut items)| {
            // a fixed order keeps sums independent of the input order
            items.sort_by(|a, b| (a.episode, a.window_index).cmp(&(b.episode, b.window_index)));
            GroupStats {
                soil_type,
                relative_density: f64::from_bits(id),
                count: items.len(),
                estimate: moments(&items, |r| r.prediction.theta.to_array()),
                truth: moments(&items, |r| r.truth.to_array()),
                known: mean_known(&items),
            }
        })
        .collect();
    let mut agg = AggregatedParams { groups };
    agg.groups.sort_by(|a, b| (a.soil_type, a.relative_density).partial_cmp(&(b.soil_type, b.relative_density)).expect("finite densities"));
    agg
}

/// Force-model values for one group at a fixed depth and no surcharge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub soil_type: SoilType,
    pub relative_density: f64,
    pub d_fixed: f64,
    /// From the mean estimate, N; `None` if the wedge is singular.
    pub f_estimate: Option<f64>,
    /// From the mean ground truth, N.
    pub f_truth: Option<f64>,
    pub beta_estimate: Option<f64>,
    pub beta_truth: Option<f64>,
    /// Why a value is missing.
    pub note: Option<String>,
}

/// Force with β re-solved, depth `d`, no surcharge and no depth correction.
pub fn fixed_depth_force(known: &KnownParams, u: &EstimatedParams, d: f64) -> Result<(f64, f64), FeeError> {
    let k = KnownParams { d, q: 0.0, ..*known };
    let th = k.theta(&EstimatedParams { delta_d: 0.0, ..*u });
    let beta = fee::solve_beta_star(&th, ParamTable::standard().beta_interval())?;
    Ok((fee::fee_force(&th.with_beta(beta))?, beta))
}

pub fn hypothetical_force_curve(agg: &AggregatedParams, d_fixed: f64) -> Vec<CurvePoint> {
    agg.groups
        .iter()
        .map(|g| {
            let est = fixed_depth_force(&g.known, &g.estimate_mean(), d_fixed);
            let tru = fixed_depth_force(&g.known, &g.truth_mean(), d_fixed);
            let note = match (&est, &tru) {
                (Err(e), _) => Some(format!("estimate: {e}")),
                (_, Err(e)) => Some(format!("truth: {e}")),
                _ => None,
            };
            CurvePoint {
                soil_type: g.soil_type,
                relative_density: g.relative_density,
                d_fixed,
                f_estimate: est.as_ref().ok().map(|x| x.0),
                f_truth: tru.as_ref().ok().map(|x| x.0),
                beta_estimate: est.ok().map(|x| x.1),
                beta_truth: tru.ok().map(|x| x.1),
                note,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceMetrics {
    pub count: usize,
    /// Mean ‖F − F̂‖, N.
    pub mean_abs_error: f64,
    /// Mean ‖F‖, N.
    pub mean_measured: f64,
    pub ratio_to_measured: f64,
    /// Mean |F − F̂| per axis, N.
    pub axis_mean_abs_error: [f64; 2],
    /// Per-axis error over the machine limits.
    pub ratio_to_limits: [f64; 2],
    /// Mean ‖F_r‖, N.
    pub mean_residual: f64,
    pub masked: usize,
}

pub fn force_metrics(records: &[EvalRecord]) -> Result<ForceMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = records.len() as f64;
    let mut err = 0.0;
    let mut meas = 0.0;
    let mut axis = [0.0; 2];
    let mut res = 0.0;
    for r in records {
        let p = &r.prediction;
        let e = [r.force[0] - p.f_hat[0], r.force[1] - p.f_hat[1]];
        err += e[0].hypot(e[1]);
        meas += r.force[0].hypot(r.force[1]);
        axis[0] += e[0].abs();
        axis[1] += e[1].abs();
        res += p.residual[0].hypot(p.residual[1]);
    }
    let mean_abs_error = err / n;
    let mean_measured = meas / n;
    let axis = axis.map(|a| a / n);
    Ok(ForceMetrics {
        count: records.len(),
        mean_abs_error,
        mean_measured,
        ratio_to_measured: if mean_measured > 0.0 { mean_abs_error / mean_measured } else { f64::INFINITY },
        axis_mean_abs_error: axis,
        ratio_to_limits: [axis[0] / MACHINE_LIMITS[0], axis[1] / MACHINE_LIMITS[1]],
        mean_residual: res / n,
        masked: records.iter().filter(|r| r.prediction.masked).count(),
    })
}

pub fn force_metrics_by_type(records: &[EvalRecord]) -> Result<BTreeMap<SoilType, ForceMetrics>, EvalError> {
    let mut by: BTreeMap<SoilType, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.soil_type).or_default().push(*r);
    }
    by.into_iter().map(|(t, rs)| Ok((t, force_metrics(&rs)?))).collect()
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` with fewer than two points or a
/// constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Rank correlation between relative density and the mean estimate of
/// parameter `index` (0 = φ, 1 = c) for one soil type, over groups with
/// relative density at most `max_density`.
pub fn density_trend(agg: &AggregatedParams, soil: SoilType, index: usize, max_density: f64) -> Option<f64> {
    let g: Vec<&GroupStats> = agg.groups.iter().filter(|g| g.soil_type == soil && g.relative_density <= max_density).collect();
    let x: Vec<f64> = g.iter().map(|g| g.relative_density).collect();
    let y: Vec<f64> = g.iter().map(|g| g.estimate[index].mean).collect();
    spearman(&x, &y)
}

const PARAM_NAMES: [&str; 5] = ["phi", "c", "delta", "beta", "delta_d"];

pub fn write_parameters_csv(agg: &AggregatedParams, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["soil_type".to_string(), "relative_density".into(), "count".into()];
    for src in ["est", "true"] {
        for p in PARAM_NAMES {
            header.push(format!("{src}_{p}_mean"));
            header.push(format!("{src}_{p}_var"));
        }
    }
    w.write_record(&header)?;
    for g in &agg.groups {
        let mut row = vec![g.soil_type.to_string(), g.relative_density.to_string(), g.count.to_string()];
        for m in g.estimate.iter().chain(&g.truth) {
            row.push(m.mean.to_string());
            row.push(m.var.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_curve_csv(curve: &[CurvePoint], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["soil_type", "relative_density", "d_fixed", "f_estimate", "f_truth", "beta_estimate", "beta_truth", "note"])?;
    for c in curve {
        w.write_record([
            c.soil_type.to_string(),
            c.relative_density.to_string(),
            c.d_fixed.to_string(),
            opt(c.f_estimate),
            opt(c.f_truth),
            opt(c.beta_estimate),
            opt(c.beta_truth),
            c.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row for the whole set (`scope` = "all") and one per soil type.
pub fn write_metrics_csv(all: &ForceMetrics, by_type: &BTreeMap<SoilType, ForceMetrics>, path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scope",
        "count",
        "mean_abs_error",
        "mean_measured",
        "ratio_to_measured",
        "mae_x",
        "mae_z",
        "ratio_to_limit_x",
        "ratio_to_limit_z",
        "mean_residual",
        "masked",
    ])?;
    let rows = std::iter::once(("all".to_string(), all)).chain(by_type.iter().map(|(t, m)| (t.to_string(), m)));
    for (scope, m) in rows {
        w.write_record([
            scope,
            m.count.to_string(),
            m.mean_abs_error.to_string(),
            m.mean_measured.to_string(),
            m.ratio_to_measured.to_string(),
            m.axis_mean_abs_error[0].to_string(),
            m.axis_mean_abs_error[1].to_string(),
            m.ratio_to_limits[0].to_string(),
            m.ratio_to_limits[1].to_string(),
            m.mean_residual.to_string(),
            m.masked.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-window estimates.
pub fn write_predictions_csv(records: &[EvalRecord], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["episode", "window", "soil_type", "relative_density", "f_x", "f_z", "f_hat_x", "f_hat_z", "f_r_x", "f_r_z", "masked"]
        .map(String::from)
        .to_vec();
    header.extend(PARAM_NAMES.iter().map(|p| format!("est_{p}")));
    header.extend(PARAM_NAMES.iter().map(|p| format!("true_{p}")));
    w.write_record(&header)?;
    for r in records {
        let p = &r.prediction;
        let mut row = vec![
            r.episode.to_string(),
            r.window_index.to_string(),
            r.soil_type.to_string(),
            r.relative_density.to_string(),
            r.force[0].to_string(),
            r.force[1].to_string(),
            p.f_hat[0].to_string(),
            p.f_hat[1].to_string(),
            p.residual[0].to_string(),
            p.residual[1].to_string(),
            p.masked.to_string(),
        ];
        row.extend(p.theta.to_array().iter().chain(r.truth.to_array().iter()).map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Summary written next to the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub software: String,
    pub metrics: ForceMetrics,
    pub by_type: BTreeMap<SoilType, ForceMetrics>,
    pub curve_depths: Vec<f64>,
    /// Emitted estimates inside their limits, out of `metrics.count`.
    pub within_limits: usize,
}
