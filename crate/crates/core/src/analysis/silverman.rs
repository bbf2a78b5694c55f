//! Critical-bandwidth multimodality test with a smoothed bootstrap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{rng, stats};

/// Points of the density grid used for mode counting.
pub const KDE_GRID: usize = 1024;
/// The grid extends this many bandwidths past the sample range.
pub const GRID_PAD: f64 = 3.0;
/// Gaussian kernel truncation, in bandwidths.
pub const KERNEL_CUTOFF: f64 = 6.0;
pub const DEFAULT_BOOTSTRAPS: usize = 500;
pub const MIN_BOOTSTRAPS: usize = 200;
pub const MIN_SAMPLE: usize = 20;
/// Significance level used for verdicts.
pub const SIGNIFICANCE: f64 = 0.02;

const BISECTION_RATIO: f64 = 1.0 + 1e-4;
const LOWER_BRACKET: f64 = 1e-4;
/// Densities below this fraction of the peak count as zero.
const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilvermanResult {
    pub p_value: f64,
    pub h_crit: f64,
    pub k: usize,
    pub n: usize,
    pub n_boot: usize,
}

impl SilvermanResult {
    /// More than `k` modes at the [`SIGNIFICANCE`] level.
    pub fn rejects(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

/// Gaussian KDE (unnormalised) of `sample` at bandwidth `h`, evaluated by
/// linear binning on a [`KDE_GRID`]-point grid over the range padded by
/// [`GRID_PAD`] bandwidths. Returns `(grid_start, spacing, density)`.
pub fn binned_kde(sample: &[f64], h: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = stats::min_max(sample);
    binned_kde_range(sample, h, lo, hi)
}

fn binned_kde_range(sample: &[f64], h: f64, lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let start = lo - GRID_PAD * h;
    let spacing = (hi - lo + 2.0 * GRID_PAD * h) / (KDE_GRID - 1) as f64;
    let mut counts = vec![0.0; KDE_GRID];
    for &x in sample {
        let pos = (x - start) / spacing;
        let i = (pos.floor() as usize).min(KDE_GRID - 2);
        let w = pos - i as f64;
        counts[i] += 1.0 - w;
        counts[i + 1] += w;
    }
    let reach = ((KERNEL_CUTOFF * h / spacing).ceil() as usize).min(KDE_GRID - 1);
    let kernel: Vec<f64> = (0..=reach)
        .map(|l| {
            let u = l as f64 * spacing / h;
            (-0.5 * u * u).exp()
        })
        .collect();
    let mut dens = vec![0.0; KDE_GRID];
    for (j, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let a = j.saturating_sub(reach);
        let b = (j + reach).min(KDE_GRID - 1);
        for (i, d) in dens[a..=b].iter_mut().enumerate() {
            *d += c * kernel[(a + i).abs_diff(j)];
        }
    }
    (start, spacing, dens)
}

/// Number of strict local maxima of a sampled density. Runs of equal values
/// are merged first, so a flat top counts once.
pub fn count_modes(density: &[f64]) -> usize {
    let peak = density.iter().cloned().fold(0.0, f64::max);
    let floor = peak * DENSITY_FLOOR;
    let mut levels: Vec<f64> = Vec::with_capacity(density.len());
    for &d in density {
        let d = if d < floor { 0.0 } else { d };
        if levels.last() != Some(&d) {
            levels.push(d);
        }
    }
    let mut modes = 0;
    for i in 0..levels.len() {
        let left = if i == 0 { f64::NEG_INFINITY } else { levels[i - 1] };
        let right = levels.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if levels[i] > left && levels[i] > right && levels[i] > 0.0 {
            modes += 1;
        }
    }
    modes
}

/// Mode count of the binned KDE at bandwidth `h`.
pub fn kde_modes(sample: &[f64], h: f64) -> usize {
    count_modes(&binned_kde(sample, h).2)
}

fn check_sample(sample: &[f64]) -> Result<()> {
    if sample.len() < MIN_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "multimodality test needs at least {MIN_SAMPLE} points, got {}",
            sample.len()
        )));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("sample contains non-finite values".into()));
    }
    Ok(())
}

/// Smallest bandwidth at which the KDE has at most `k` modes, by geometric
/// bisection between `1e-4` and `1` times the sample range.
pub fn critical_bandwidth(sample: &[f64], k: usize) -> Result<f64> {
    check_sample(sample)?;
    if k == 0 {
        return Err(Error::InvalidInput("mode count k must be at least 1".into()));
    }
    let (lo, hi) = stats::min_max(sample);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Numerical("critical bandwidth: sample has zero range".into()));
    }
    let mut h_hi = range;
    let mut grow = 0;
    while kde_modes(sample, h_hi) > k {
        h_hi *= 2.0;
        grow += 1;
        if grow > 20 {
            return Err(Error::Numerical("critical bandwidth: no upper bracket".into()));
        }
    }
    let mut h_lo = range * LOWER_BRACKET;
    if kde_modes(sample, h_lo) <= k {
        return Err(Error::Numerical(format!(
            "critical bandwidth: at most {k} modes already at h = {h_lo:e}; bisection does not bracket"
        )));
    }
    while h_hi / h_lo > BISECTION_RATIO {
        let mid = (h_lo * h_hi).sqrt();
        if kde_modes(sample, mid) > k {
            h_lo = mid;
        } else {
            h_hi = mid;
        }
    }
    Ok(h_hi)
}

/// Tests `H0: at most k modes`. The p-value is the fraction of smoothed
/// bootstrap samples (drawn from the KDE at the critical bandwidth and
/// rescaled to the sample variance) whose own critical bandwidth exceeds the
/// observed one. Mode counts fall as the Gaussian bandwidth grows, so this is
/// evaluated as the fraction of resamples with more than `k` modes at the
/// observed critical bandwidth.
pub fn silverman_test(sample: &[f64], k: usize, n_boot: usize, seed: u64) -> Result<SilvermanResult> {
    if n_boot < MIN_BOOTSTRAPS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_BOOTSTRAPS} bootstrap samples, got {n_boot}"
        )));
    }
    let h = critical_bandwidth(sample, k)?;
    let n = sample.len();
    let mean = stats::mean(sample);
    let var = stats::variance(sample);
    let shrink = 1.0 / (1.0 + h * h / var).sqrt();
    let exceed: usize = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::aux_stream(seed, b);
            let resample: Vec<f64> = (0..n)
                .map(|_| {
                    let i = rand::Rng::random_range(&mut rng, 0..n);
                    mean + (sample[i] - mean + h * rng::normal(&mut rng)) * shrink
                })
                .collect();
            usize::from(kde_modes(&resample, h) > k)
        })
        .sum();
    Ok(SilvermanResult {
        p_value: exceed as f64 / n_boot as f64,
        h_crit: h,
        k,
        n,
        n_boot,
    })
}
