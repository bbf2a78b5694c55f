//! Benchmark fixtures shared by the criterion benches.

use chiarella_core::simulator::simulate_discrete;
use chiarella_core::ChiarellaParams;

/// Linear parameters in the range seen on index data.
pub fn index_params() -> ChiarellaParams {
    ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
}

/// De-drifted monthly log-prices of length `n`.
pub fn monthly_path(n: usize, seed: u64) -> Vec<f64> {
    simulate_discrete(&index_params(), n, seed, None).expect("valid parameters").p
}
