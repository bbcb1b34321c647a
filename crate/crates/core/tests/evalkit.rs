use soil_pinn::estimator::{EstimatedParams, KnownParams, Prediction};
use soil_pinn::evalkit::{
    aggregate_parameters, density_trend, fixed_depth_force, force_metrics, force_metrics_by_type, hypothetical_force_curve, spearman, EvalRecord,
    Moments, MACHINE_LIMITS,
};
use soil_pinn::fee::{fee_coefficients, fee_force};
use soil_pinn::limits::ParamTable;
use soil_pinn::simulator::SoilType;

fn known() -> KnownParams {
    KnownParams { c_a: 200.0, gamma: 17000.0, rho: 80f64.to_radians(), alpha: 0.0, w: 3.164, d: 0.12, q: 0.0, v: [0.5, 0.0] }
}

fn params(phi_deg: f64, c: f64) -> EstimatedParams {
    EstimatedParams { phi: phi_deg.to_radians(), c, delta: 15f64.to_radians(), beta: 28f64.to_radians(), delta_d: 0.0 }
}

fn record(episode: usize, window_index: usize, soil_type: SoilType, density: f64, est: EstimatedParams, force: [f64; 2], f_hat: [f64; 2]) -> EvalRecord {
    EvalRecord {
        episode,
        window_index,
        soil_type,
        relative_density: density,
        known: known(),
        truth: params(30.0, 0.0),
        force,
        prediction: Prediction { theta: est, raw: est, residual: [0.0; 2], f_fee: f_hat, f_hat, masked: false },
    }
}

#[test]
fn single_window_group_has_zero_variance() {
    let r = record(0, 0, SoilType::Sand, 10.0, params(31.0, 50.0), [1.0, 1.0], [1.0, 1.0]);
    let agg = aggregate_parameters(&[r]);
    assert_eq!(agg.groups.len(), 1);
    let g = &agg.groups[0];
    assert_eq!(g.count, 1);
    for m in g.estimate.iter().chain(&g.truth) {
        assert_eq!(m.var, 0.0);
    }
    assert_eq!(g.estimate_mean(), params(31.0, 50.0));
}

#[test]
fn identical_estimates_average_to_themselves() {
    let e = params(27.5, 1234.5);
    let rs: Vec<_> = (0..7).map(|i| record(i, i, SoilType::Loam, 40.0, e, [0.0; 2], [0.0; 2])).collect();
    let g = &aggregate_parameters(&rs).groups[0];
    assert_eq!(g.count, 7);
    let m = g.estimate_mean();
    assert!((m.phi - e.phi).abs() < 1e-15);
    assert!((m.c - e.c).abs() < 1e-9);
    assert!(g.estimate[1].var < 1e-18);
}

#[test]
fn three_window_group_by_hand() {
    // c = 100, 200, 600: mean 300, population variance (40000 + 10000 + 90000) / 3
    let rs = [100.0, 200.0, 600.0].map(|c| record(c as usize, 0, SoilType::Clay, 20.0, params(20.0, c), [0.0; 2], [0.0; 2]));
    let g = &aggregate_parameters(&rs).groups[0];
    assert_eq!(g.estimate[1], Moments { mean: 300.0, var: 140000.0 / 3.0 });
    assert_eq!(Moments::of([2.0, 4.0]), Moments { mean: 3.0, var: 1.0 });
}

#[test]
fn aggregation_ignores_record_order() {
    let mut rs = Vec::new();
    for (i, t) in SoilType::ALL.into_iter().enumerate() {
        for k in 0..5 {
            let c = 0.1 + 1000.0 * (k as f64).sin().abs() + i as f64 / 3.0;
            rs.push(record(10 * i + k % 2, k, t, 25.0 * (k % 2) as f64, params(18.0 + 0.37 * k as f64, c), [0.0; 2], [0.0; 2]));
        }
    }
    let a = aggregate_parameters(&rs);
    assert_eq!(a.groups.len(), 8);
    rs.reverse();
    rs.swap(1, 7);
    assert_eq!(aggregate_parameters(&rs), a);
    // sorted by type, then density
    for w in a.groups.windows(2) {
        assert!((w[0].soil_type, w[0].relative_density) < (w[1].soil_type, w[1].relative_density));
    }
}

/// Force at the β of least N_γ found by a dense scan, skipping wedges whose η
/// reaches π.
fn dense_scan_force(k: &KnownParams, u: &EstimatedParams, d: f64) -> f64 {
    let (lo, hi) = ParamTable::standard().beta_interval();
    let k = KnownParams { d, q: 0.0, ..*k };
    let n = 200_000;
    let (_, th) = (0..=n)
        .filter_map(|i| {
            let beta = lo + (hi - lo) * i as f64 / n as f64;
            let th = k.theta(&EstimatedParams { beta, delta_d: 0.0, ..*u });
            if th.eta() >= std::f64::consts::PI {
                return None;
            }
            fee_coefficients(&th).ok().map(|c| (c.n_gamma, th))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    fee_force(&th).unwrap()
}

#[test]
fn curve_matches_dense_scan() {
    for (phi, c, d) in [(30.0, 0.0, 0.1), (20.0, 5000.0, 0.2), (40.0, 800.0, 0.2), (17.0, 9000.0, 0.1)] {
        let u = EstimatedParams { delta_d: 0.05, ..params(phi, c) };
        let (f, beta) = fixed_depth_force(&KnownParams { q: 3000.0, ..known() }, &u, d).unwrap();
        let oracle = dense_scan_force(&known(), &u, d);
        assert!((f - oracle).abs() <= 1e-6 * oracle, "phi {phi} c {c}: {f} vs {oracle}");
        let (lo, hi) = ParamTable::standard().beta_interval();
        assert!((lo..=hi).contains(&beta));
    }
}

#[test]
fn equal_means_give_equal_curves() {
    let mut rs = Vec::new();
    for k in 0..4 {
        let mut r = record(k, 0, SoilType::Gravel, 50.0, params(30.0, 0.0), [0.0; 2], [0.0; 2]);
        r.truth = params(30.0, 0.0);
        rs.push(r);
    }
    let agg = aggregate_parameters(&rs);
    for d in [0.1, 0.2] {
        let c = hypothetical_force_curve(&agg, d);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].f_estimate, c[0].f_truth);
        assert_eq!(c[0].beta_estimate, c[0].beta_truth);
        assert!(c[0].note.is_none());
        assert!(c[0].f_estimate.unwrap() > 0.0);
    }
}

#[test]
fn perfect_prediction_has_zero_error() {
    let rs: Vec<_> = (0..6).map(|i| record(i, 0, SoilType::ALL[i % 4], 0.0, params(30.0, 0.0), [1000.0 * i as f64, -300.0], [1000.0 * i as f64, -300.0])).collect();
    let m = force_metrics(&rs).unwrap();
    assert_eq!(m.mean_abs_error, 0.0);
    assert_eq!(m.axis_mean_abs_error, [0.0, 0.0]);
    assert_eq!(m.ratio_to_measured, 0.0);
    assert_eq!(m.count, 6);
    assert!(force_metrics(&[]).is_err());
}

#[test]
fn two_sample_metrics_by_hand() {
    let a = record(0, 0, SoilType::Sand, 0.0, params(30.0, 0.0), [3000.0, 4000.0], [0.0, 0.0]);
    let mut b = record(1, 0, SoilType::Clay, 0.0, params(30.0, 0.0), [6000.0, 8000.0], [6000.0 - 600.0, 8000.0 + 800.0]);
    b.prediction.residual = [30.0, 40.0];
    b.prediction.masked = true;
    let m = force_metrics(&[a, b]).unwrap();
    // errors 5000 and 1000, measured 5000 and 10000
    assert_eq!(m.mean_abs_error, 3000.0);
    assert_eq!(m.mean_measured, 7500.0);
    assert_eq!(m.ratio_to_measured, 0.4);
    assert_eq!(m.axis_mean_abs_error, [1800.0, 2400.0]);
    assert_eq!(m.ratio_to_limits, [1800.0 / MACHINE_LIMITS[0], 2400.0 / MACHINE_LIMITS[1]]);
    assert_eq!(m.mean_residual, 25.0);
    assert_eq!(m.masked, 1);

    let by = force_metrics_by_type(&[a, b]).unwrap();
    assert_eq!(by.len(), 2);
    assert_eq!(by[&SoilType::Sand].mean_abs_error, 5000.0);
    assert_eq!(by[&SoilType::Clay].ratio_to_measured, 0.1);
}

#[test]
fn spearman_by_hand() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 3.0, 2.0, 1.0]), Some(-1.0));
    // ranks x 1..5, y 2,1,4,3,5: sum d^2 = 4, rho = 1 - 6*4/(5*24) = 0.8
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[20.0, 10.0, 40.0, 30.0, 50.0]).unwrap() - 0.8).abs() < 1e-15);
    // tie: y ranks 1.5, 1.5, 3 against 1, 2, 3 gives sqrt(3)/2
    assert!((spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 7.0]).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
    assert_eq!(spearman(&[1.0], &[1.0]), None);
    assert_eq!(spearman(&[1.0, 2.0], &[3.0, 3.0]), None);
}

#[test]
fn density_trend_uses_group_means_below_cap() {
    let mut rs = Vec::new();
    for (i, d) in [0.0, 30.0, 60.0, 90.0].into_iter().enumerate() {
        let c = if d > 60.0 { 0.0 } else { 1000.0 + d };
        rs.push(record(i, 0, SoilType::Clay, d, params(20.0 + i as f64, c), [0.0; 2], [0.0; 2]));
    }
    let agg = aggregate_parameters(&rs);
    assert_eq!(density_trend(&agg, SoilType::Clay, 1, 60.0), Some(1.0));
    assert!(density_trend(&agg, SoilType::Clay, 1, 100.0).unwrap() < 1.0);
    assert_eq!(density_trend(&agg, SoilType::Clay, 0, 100.0), Some(1.0));
    assert_eq!(density_trend(&agg, SoilType::Sand, 0, 100.0), None);
}
