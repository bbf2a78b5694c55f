use chiarella_core::analysis::backtest::backtest_signals;
use chiarella_core::analysis::{
    average_class_hessian, js_distance, numerical_mispricing, silverman_test, sloppiness_hessian, variance_match,
    MispricingSample, NumericalProtocol, SloppinessOptions, VarianceMatchOptions,
};
use chiarella_core::filtering::{filter_auto, StateSpaceSpec};
use chiarella_core::simulator::simulate_discrete;
use chiarella_core::{rng, stats, ChiarellaParams, CleanSeries, ModelKind};
use chrono::NaiveDate;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(1850, 1, 1).unwrap()
}

fn index_params() -> ChiarellaParams {
    ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
}

fn mixture(seed: u64, n: usize, mu: f64, sd: f64) -> Vec<f64> {
    rng::normals(&mut rng::aux_stream(seed, 0), n)
        .iter()
        .enumerate()
        .map(|(i, z)| if i % 2 == 0 { -mu + sd * z } else { mu + sd * z })
        .collect()
}

#[test]
fn silverman_level_and_power_over_100_seeds() {
    let mut level = 0;
    let mut power = 0;
    for seed in 0..100 {
        let normal = rng::normals(&mut rng::aux_stream(1000 + seed, 0), 1000);
        if silverman_test(&normal, 1, 500, seed).unwrap().p_value > 0.02 {
            level += 1;
        }
        if silverman_test(&mixture(2000 + seed, 1000, 2.0, 0.5), 1, 500, seed).unwrap().p_value < 0.02 {
            power += 1;
        }
    }
    assert!(level >= 95, "level {level}/100");
    assert!(power >= 95, "power {power}/100");
}

#[test]
fn cubic_cycle_is_bimodal_and_damped_spiral_is_not() {
    let cubic = ChiarellaParams::linear(0.05, 1.0 / 7.0, 0.65, 10.0)
        .with_noise(0.1, 0.05)
        .with_kappa3(0.5);
    let s = numerical_mispricing(&cubic, &NumericalProtocol::default()).unwrap();
    assert_eq!(s.n, 1_000_000);
    assert_eq!(s.stride, 10);
    assert!(silverman_test(&s.delta, 1, 500, 0).unwrap().p_value < 0.02);

    let spiral = ChiarellaParams::linear(0.2, 0.5, 0.5, 1.0).with_noise(0.1, 0.05);
    let s = numerical_mispricing(&spiral, &NumericalProtocol::default()).unwrap();
    assert!(silverman_test(&s.delta, 1, 500, 0).unwrap().p_value > 0.02);
}

#[test]
fn js_fixture_pair_in_band() {
    let unimodal = rng::normals(&mut rng::aux_stream(1, 0), 2000);
    let bimodal = mixture(2, 2000, 0.8, 0.6);
    let d = js_distance(&unimodal, &bimodal).unwrap().value;
    assert!((0.1..=0.4).contains(&d), "{d}");
}

#[test]
fn sloppiness_spectrum_of_us_row() {
    let r = sloppiness_hessian(&index_params(), ModelKind::Linear, &SloppinessOptions::default()).unwrap();
    assert!(r.decades_spanned >= 5.0, "{}", r.decades_spanned);
    let (_, align) = r.alignment("sigma_V").unwrap();
    assert!(align >= 0.95, "{align}");
}

#[test]
fn small_signal_beta_gamma_rows_agree() {
    let theta = ChiarellaParams { gamma: 1.0, ..index_params() };
    let opts = SloppinessOptions::default();
    let m = simulate_discrete(&theta, opts.horizon, opts.seed, None).unwrap().m;
    assert!(m.iter().all(|x| (theta.gamma * x).abs() < 0.1));
    let r = sloppiness_hessian(&theta, ModelKind::Linear, &opts).unwrap();
    for p in &r.param_names {
        let b = r.entry("beta", p).unwrap();
        let g = r.entry("gamma", p).unwrap();
        assert!((b - g).abs() <= 0.05 * b.abs().max(g.abs()), "{p}: {b} vs {g}");
    }
}

#[test]
fn class_average_keeps_sloppy_spectrum() {
    let kappas = [0.027, 0.02, 0.035, 0.015, 0.03];
    let betas = [0.076, 0.05, 0.1, 0.06, 0.08];
    let reports: Vec<_> = (0..5)
        .map(|i| {
            let theta = ChiarellaParams {
                kappa: kappas[i],
                beta: betas[i],
                ..index_params()
            };
            let opts = SloppinessOptions {
                seed: i as u64,
                ..Default::default()
            };
            sloppiness_hessian(&theta, ModelKind::Linear, &opts).unwrap()
        })
        .collect();
    let avg = average_class_hessian(&reports).unwrap();
    assert!(avg.decades_spanned >= 4.0, "{}", avg.decades_spanned);
}

#[test]
fn variance_match_respects_likelihood_budget() {
    let mut ok = 0;
    for case in 0..20u64 {
        let theta = ChiarellaParams {
            kappa: 0.015 + 0.001 * case as f64,
            ..index_params()
        };
        let data = simulate_discrete(&theta, 1500, 300 + case, None).unwrap().p;
        let f = filter_auto(&StateSpaceSpec::new(theta, data.clone()).unwrap()).unwrap();
        let sample = MispricingSample::from_filter(&data, &f, false).unwrap();
        let target_var = stats::variance(&sample.delta);
        let target_mean = stats::mean(&sample.delta);
        let opts = VarianceMatchOptions {
            seed: case,
            ..Default::default()
        };
        let r = variance_match(&theta, &data, target_mean, target_var, ModelKind::Linear, &opts).unwrap();
        if r.matched && r.loglik_drop <= opts.max_loglik_drop {
            ok += 1;
        }
    }
    assert!(ok >= 16, "{ok}/20");
}

#[test]
fn trend_signal_profitable_on_trend_dominant_data() {
    let theta = ChiarellaParams::linear(0.01, 0.2, 0.2, 4.0).with_noise(0.043, 0.011);
    let srs: Vec<f64> = (0..50)
        .map(|seed| {
            let p = simulate_discrete(&theta, 1200, 700 + seed, None).unwrap().p;
            let series = CleanSeries::from_dedrifted("t", start(), p).unwrap();
            let f = filter_auto(&StateSpaceSpec::new(theta, series.dedrifted.clone()).unwrap()).unwrap();
            backtest_signals(&theta, &series, &f, &[]).unwrap().sr_trend
        })
        .collect();
    let n = srs.len() as f64;
    let t = stats::mean(&srs) / (stats::sample_std(&srs) / n.sqrt());
    let p = 1.0 - StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t);
    assert!(stats::mean(&srs) > 0.0 && p < 0.05, "t = {t}, p = {p}");
}
