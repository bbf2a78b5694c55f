use chiarella_core::calibration::{
    em_fit, std_errors, three_step_calibrate, ClassOptions, EmFixed, EmOptions, ModelKind, MONOTONE_SLACK,
};
use chiarella_core::filtering::default_prior_variance;
use chiarella_core::simulator::simulate_discrete;
use chiarella_core::{stats, ChiarellaParams, CleanSeries};
use chrono::NaiveDate;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1790, 1, 1).unwrap()
}

fn index_params() -> ChiarellaParams {
    ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
}

fn simulated(params: &ChiarellaParams, n: usize, seed: u64, id: &str) -> CleanSeries {
    let p = simulate_discrete(params, n, seed, None).unwrap().p;
    CleanSeries::from_dedrifted(id, start(), p).unwrap()
}

fn class(seed: u64, model: ModelKind) -> (Vec<ChiarellaParams>, Vec<CleanSeries>) {
    let kappas = [0.027, 0.02, 0.035, 0.015, 0.03];
    let betas = [0.076, 0.05, 0.1, 0.06, 0.08];
    let truth: Vec<ChiarellaParams> = (0..5)
        .map(|i| {
            let base = ChiarellaParams::linear(kappas[i], 0.2, betas[i], 4.168).with_noise(0.043, 0.043 / 4.0);
            match model {
                ModelKind::Linear => base,
                ModelKind::Cubic => base.with_kappa3(0.2),
            }
        })
        .collect();
    let series = truth
        .iter()
        .enumerate()
        .map(|(i, p)| simulated(p, 2676, seed * 10 + i as u64, &format!("asset{i}")))
        .collect();
    (truth, series)
}

#[test]
fn us_row_recovery_over_25_seeds() {
    let truth = index_params();
    let fixed = EmFixed::new(truth.alpha, truth.gamma, ModelKind::Linear);
    let mut hits = 0;
    for seed in 0..25 {
        let s = simulated(&truth, 2676, 500 + seed, "us");
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!(rep.history.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK));
        let t = rep.theta;
        if (t.kappa - 0.027).abs() <= 0.021 && (t.beta - 0.076).abs() <= 0.069 && (t.sigma_n - 0.043).abs() <= 0.003 {
            hits += 1;
        }
    }
    assert!(hits >= 20, "{hits}/25");
}

#[test]
fn linear_class_recovers_ratio_and_kappa() {
    let mut kappa_errors = Vec::new();
    let mut ratios = Vec::new();
    for seed in 1..5 {
        let (truth, series) = class(seed, ModelKind::Linear);
        let cal = three_step_calibrate(&series, 0.2, 4.168, ModelKind::Linear, &ClassOptions::default()).unwrap();
        ratios.push(cal.sigma_ratio);
        assert!(cal.sigma_ratio_err > 0.0);
        for (t, s) in truth.iter().zip(&series) {
            let rep = &cal.per_asset[&s.id];
            kappa_errors.push((rep.theta.kappa - t.kappa).abs() / t.kappa);
            assert!((rep.theta.sigma_v * cal.sigma_ratio - rep.theta.sigma_n).abs() < 1e-12);
            let step1 = &cal.step1[&s.id];
            assert!(rep.loglik_norm >= step1.loglik_norm - 0.05 * step1.loglik_norm.abs());
            assert_eq!(rep.sigma_ratio, Some(cal.sigma_ratio));
            let err = rep.theta_err.sigma_n.expect("sigma_N error");
            assert!(err > 0.0 && err <= 0.017, "{err}");
            assert!(rep.theta_err.sigma_v.is_some());
        }
    }
    assert!(stats::median(&kappa_errors) < 0.25, "{kappa_errors:?}");
    assert!((3.3..=4.8).contains(&stats::median(&ratios)), "{ratios:?}");
}

#[test]
fn cubic_refit_keeps_kappa3_positive() {
    let truth = ChiarellaParams::linear(0.01, 0.2, 0.076, 4.168)
        .with_noise(0.043, 0.043 / 4.0)
        .with_kappa3(0.5);
    let fixed = EmFixed {
        sigma_ratio: Some(4.0),
        ..EmFixed::new(0.2, 4.168, ModelKind::Cubic)
    };
    let positive = (0..20)
        .filter(|&seed| {
            let s = simulated(&truth, 2676, 900 + seed, "c");
            let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
            assert!(rep.history.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK));
            rep.theta.kappa3 > 0.0
        })
        .count();
    assert!(positive >= 18, "{positive}/20");
}

#[test]
fn cubic_three_step_runs() {
    let (_, series) = class(2, ModelKind::Cubic);
    let opts = ClassOptions {
        std_errors: false,
        ..Default::default()
    };
    let cal = three_step_calibrate(&series, 0.2, 4.168, ModelKind::Cubic, &opts).unwrap();
    assert!(cal.sigma_ratio > 0.0);
    assert!(cal.per_asset.values().all(|r| r.model == ModelKind::Cubic && r.theta.kappa3 >= 0.0));
}

#[test]
fn standard_errors_shrink_like_inverse_sqrt_t() {
    let truth = index_params();
    let fixed = EmFixed {
        sigma_ratio: Some(truth.sigma_n / truth.sigma_v),
        ..EmFixed::new(truth.alpha, truth.gamma, ModelKind::Linear)
    };
    let lengths = [500usize, 2000, 8000];
    let mut mean_err = Vec::new();
    for &n in &lengths {
        let mut errs = Vec::new();
        for seed in 0..4 {
            let s = simulated(&truth, n, 40 + seed, "se");
            let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
            let pv = default_prior_variance(&rep.theta);
            let se = std_errors(&rep.theta, &s.dedrifted, &fixed, pv, None).unwrap();
            errs.push(se.errors.sigma_n.expect("sigma_N error"));
        }
        mean_err.push(stats::mean(&errs));
    }
    let x: Vec<f64> = lengths.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = mean_err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (stats::mean(&x), stats::mean(&y));
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "slope {slope}, errors {mean_err:?}");
}
