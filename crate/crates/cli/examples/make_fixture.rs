//! Regenerates the synthetic fixture dataset under `fixtures/data`.
//!
//! `cargo run -p chiarella-cli --example make_fixture`

use std::path::Path;

use chiarella_core::data::monthly_dates;
use chiarella_core::simulator::simulate_discrete;
use chiarella_core::{ChiarellaParams, RawSeries};
use chrono::NaiveDate;

const MONTHS: usize = 2676;
const KAPPAS: [f64; 5] = [0.027, 0.02, 0.035, 0.015, 0.03];
const BETAS: [f64; 5] = [0.076, 0.05, 0.1, 0.06, 0.08];

/// Linear class at `σ_N/σ_V = 4`. Prices carry a constant secular growth,
/// matched by `drift_order_override = 1` in the fixture configs.
pub fn linear_member(i: usize) -> ChiarellaParams {
    ChiarellaParams::linear(KAPPAS[i], 0.2, BETAS[i], 4.168).with_noise(0.043, 0.043 / 4.0)
}

/// Cubic members deep in the oscillating regime.
pub fn cubic_member(i: usize) -> ChiarellaParams {
    ChiarellaParams::linear(0.05, 1.0 / 7.0, 0.65 + 0.05 * i as f64, 10.0)
        .with_noise(0.1, 0.05)
        .with_kappa3(0.5)
}

fn write_series(dir: &Path, id: &str, params: &ChiarellaParams, seed: u64) {
    let p = simulate_discrete(params, MONTHS, seed, None).unwrap().p;
    let dates = monthly_dates(NaiveDate::from_ymd_opt(1790, 1, 1).unwrap(), MONTHS);
    let prices = p
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let u = t as f64 / MONTHS as f64;
            (x + 2.0 + 3.0 * u).exp()
        })
        .collect();
    let raw = RawSeries::new(id, dates, prices, None).unwrap();
    let file = std::fs::File::create(dir.join(format!("{id}.csv"))).unwrap();
    raw.write_csv(file).unwrap();
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/data");
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..5 {
        write_series(&dir, &format!("lin{i}"), &linear_member(i), i as u64);
    }
    for i in 0..3 {
        write_series(&dir, &format!("cub{i}"), &cubic_member(i), 100 + i as u64);
    }
}
