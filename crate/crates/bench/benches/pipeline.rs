use std::hint::black_box;

use chiarella_bench::{index_params, monthly_path};
use chiarella_core::analysis::silverman_test;
use chiarella_core::calibration::{em_fit, EmFixed, EmOptions};
use chiarella_core::filtering::{kalman_smooth, ukf_smooth};
use chiarella_core::simulator::simulate_sde;
use chiarella_core::{rng, CleanSeries, DriftModel, ModelKind, StateSpaceSpec, SystemState};
use chrono::NaiveDate;
use criterion::{criterion_group, criterion_main, Criterion};

fn filters(c: &mut Criterion) {
    let spec = StateSpaceSpec::new(index_params(), monthly_path(2676, 1)).unwrap();
    c.bench_function("kalman_smooth_2676", |b| b.iter(|| kalman_smooth(black_box(&spec)).unwrap()));
    let cubic = StateSpaceSpec::new(index_params().with_kappa3(0.5), monthly_path(2676, 1)).unwrap();
    c.bench_function("ukf_smooth_2676", |b| b.iter(|| ukf_smooth(black_box(&cubic)).unwrap()));
}

fn em(c: &mut Criterion) {
    let start = NaiveDate::from_ymd_opt(1790, 1, 1).unwrap();
    let series = CleanSeries::from_dedrifted("bench", start, monthly_path(2676, 2)).unwrap();
    let fixed = EmFixed::new(0.2, 4.168, ModelKind::Linear);
    let opts = EmOptions::default();
    c.bench_function("em_fit_2676", |b| b.iter(|| em_fit(black_box(&series), &fixed, &opts).unwrap()));
}

fn silverman(c: &mut Criterion) {
    let sample = rng::normals(&mut rng::aux_stream(3, 0), 1000);
    let mut g = c.benchmark_group("silverman");
    g.sample_size(10);
    g.bench_function("n1000_boot500", |b| b.iter(|| silverman_test(black_box(&sample), 1, 500, 0).unwrap()));
    g.finish();
}

fn simulate(c: &mut Criterion) {
    let p = index_params();
    let drift = DriftModel::zero(0.0, 1000.0);
    c.bench_function("simulate_sde_1e5_steps", |b| {
        b.iter(|| simulate_sde(black_box(&p), SystemState::new(0.0, 0.0, 0.0), 0.01, 1000.0, 4, &drift).unwrap())
    });
}

criterion_group!(benches, filters, em, silverman, simulate);
criterion_main!(benches);
