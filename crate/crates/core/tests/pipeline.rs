use chiarella_core::calibration::{em_fit, EmFixed, EmOptions, ModelKind};
use chiarella_core::data::{monthly_dates, PrepOptions};
use chiarella_core::simulator::simulate_discrete;
use chiarella_core::trend::estimate_trend;
use chiarella_core::{ChiarellaParams, CleanSeries, RawSeries};
use chrono::NaiveDate;

fn index_params() -> ChiarellaParams {
    ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
}

/// Simulated monthly log-prices plus a smooth secular drift.
fn synthetic_raw(seed: u64, n: usize) -> RawSeries {
    let p = simulate_discrete(&index_params(), n, seed, None).unwrap().p;
    let dates = monthly_dates(NaiveDate::from_ymd_opt(1800, 1, 1).unwrap(), n);
    let prices = p
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let u = t as f64 / n as f64;
            (x + 2.0 + 3.0 * u + 0.4 * (6.0 * u).sin()).exp()
        })
        .collect();
    RawSeries::new("syn", dates, prices, None).unwrap()
}

#[test]
fn drift_order_barely_moves_calibration() {
    let raw = synthetic_raw(11, 2676);
    let fixed = EmFixed::new(0.2, 4.168, ModelKind::Linear);
    let fits: Vec<ChiarellaParams> = [14usize, 22, 30]
        .iter()
        .map(|&k| {
            let opts = PrepOptions {
                drift_order: Some(k),
                ..Default::default()
            };
            let clean = CleanSeries::prepare(&raw, &opts).unwrap();
            em_fit(&clean, &fixed, &EmOptions::default()).unwrap().theta
        })
        .collect();
    let base = fits[1];
    for f in &fits {
        for (a, b, name) in [
            (f.kappa, base.kappa, "kappa"),
            (f.beta, base.beta, "beta"),
            (f.sigma_n, base.sigma_n, "sigma_N"),
        ] {
            assert!((a - b).abs() < 0.2 * b.abs(), "{name}: {a} vs {b}");
        }
    }
}

#[test]
fn default_drift_order_follows_decades() {
    let raw = synthetic_raw(2, 2676);
    let clean = CleanSeries::prepare(&raw, &PrepOptions::default()).unwrap();
    assert_eq!(clean.drift.order, 22);
}

#[test]
fn trend_stage_recovers_alpha_neighbourhood() {
    let theta = ChiarellaParams::linear(0.01, 0.2, 0.2, 4.0).with_noise(0.043, 0.011);
    let series: Vec<Vec<f64>> = (0..5)
        .map(|s| simulate_discrete(&theta, 2400, 60 + s, None).unwrap().p)
        .collect();
    let set: Vec<(String, &[f64])> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("a{i}"), s.as_slice()))
        .collect();
    let set: Vec<(&str, &[f64])> = set.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    let grid = chiarella_core::trend::default_alpha_grid();
    let (fit, _) = estimate_trend(&set, &grid).unwrap();
    let pos = grid.iter().position(|&a| a == fit.alpha).unwrap();
    let truth = grid.iter().position(|&a| (a - 0.2).abs() < 1e-12).unwrap();
    assert!(pos.abs_diff(truth) <= 1, "alpha {}", fit.alpha);
    assert!(fit.gamma > 0.0);
}
