//! Mispricing samples and the per-asset bimodality table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::filtering::FilterResult;
use crate::model::{ChiarellaParams, SystemState};
use crate::simulator::simulate_sde_strided;

use super::js::histogram;
use super::silverman::{MIN_SAMPLE, SIGNIFICANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MispricingSource {
    FilteredEmpirical,
    SmoothedEmpirical,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MispricingSample {
    pub delta: Vec<f64>,
    pub source: MispricingSource,
    pub n: usize,
    /// Simulation steps per stored point (1 for empirical samples).
    pub stride: usize,
}

impl MispricingSample {
    pub fn new(delta: Vec<f64>, source: MispricingSource) -> Result<Self> {
        if delta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("mispricing sample contains non-finite values".into()));
        }
        if delta.len() < MIN_SAMPLE {
            return Err(Error::InvalidInput(format!(
                "mispricing sample needs at least {MIN_SAMPLE} points, got {}",
                delta.len()
            )));
        }
        Ok(Self {
            n: delta.len(),
            delta,
            source,
            stride: 1,
        })
    }

    /// `δ̃_t = p̃_t − ṽ_t` from filtered (causal) or smoothed value estimates.
    pub fn from_filter(dedrifted: &[f64], result: &FilterResult, smoothed: bool) -> Result<Self> {
        let (v, source) = if smoothed {
            (&result.v_smooth, MispricingSource::SmoothedEmpirical)
        } else {
            (&result.v_filt, MispricingSource::FilteredEmpirical)
        };
        if v.len() != dedrifted.len() {
            return Err(Error::InvalidInput("filter output does not match the series length".into()));
        }
        Self::new(dedrifted.iter().zip(v).map(|(p, v)| p - v).collect(), source)
    }
}

/// Options of the continuous-time mispricing simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalProtocol {
    pub horizon: f64,
    pub dt: f64,
    /// Upper bound on stored points; the path is thinned uniformly.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for NumericalProtocol {
    fn default() -> Self {
        Self {
            horizon: 1e5,
            dt: 0.01,
            max_points: 1_000_000,
            seed: 0,
        }
    }
}

/// Simulates the SDE without drift from `p = v = v0`, `m = 0` and keeps a
/// uniform subsample of at most `max_points` mispricing values.
pub fn numerical_mispricing(theta: &ChiarellaParams, protocol: &NumericalProtocol) -> Result<MispricingSample> {
    if protocol.max_points < MIN_SAMPLE {
        return Err(Error::InvalidInput("max_points below the minimum sample size".into()));
    }
    let steps = (protocol.horizon / protocol.dt).round() as usize;
    let stride = steps.div_ceil(protocol.max_points).max(1);
    let traj = simulate_sde_strided(
        theta,
        SystemState::new(theta.v0, theta.v0, 0.0),
        protocol.dt,
        protocol.horizon,
        protocol.seed,
        &DriftModel::zero(0.0, protocol.horizon),
        stride,
    )?;
    let mut d = traj.delta();
    d.remove(0);
    let mut s = MispricingSample::new(d, MispricingSource::Simulated)?;
    s.stride = stride;
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bimodal,
    Unimodal,
    Inconclusive,
}

/// Bimodal when both the filtered and smoothed samples reject unimodality,
/// unimodal when neither does, inconclusive otherwise.
pub fn empirical_verdict(p_filtered: f64, p_smoothed: f64) -> Verdict {
    empirical_verdict_at(p_filtered, p_smoothed, SIGNIFICANCE)
}

/// [`empirical_verdict`] at a custom significance level.
pub fn empirical_verdict_at(p_filtered: f64, p_smoothed: f64, level: f64) -> Verdict {
    match (p_filtered < level, p_smoothed < level) {
        (true, true) => Verdict::Bimodal,
        (false, false) => Verdict::Unimodal,
        _ => Verdict::Inconclusive,
    }
}

pub fn numerical_verdict(p: f64) -> Verdict {
    numerical_verdict_at(p, SIGNIFICANCE)
}

pub fn numerical_verdict_at(p: f64, level: f64) -> Verdict {
    if p < level {
        Verdict::Bimodal
    } else {
        Verdict::Unimodal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalityRow {
    pub asset: String,
    pub p_filtered: f64,
    pub p_smoothed: f64,
    pub p_numerical: f64,
    pub verdict_empirical: Verdict,
    pub verdict_numerical: Verdict,
    pub js_distance: f64,
}

/// Writes `bin_lo,bin_hi,empirical,numerical` probabilities on the shared
/// support of both samples.
pub fn write_histogram_csv<W: Write>(writer: W, empirical: &[f64], numerical: &[f64], bins: usize) -> Result<()> {
    if empirical.is_empty() || numerical.is_empty() || bins == 0 {
        return Err(Error::InvalidInput("histogram needs two non-empty samples and at least one bin".into()));
    }
    let (a_lo, a_hi) = crate::stats::min_max(empirical);
    let (b_lo, b_hi) = crate::stats::min_max(numerical);
    let (lo, hi) = (a_lo.min(b_lo), a_hi.max(b_hi));
    let he = histogram(empirical, lo, hi, bins);
    let hn = histogram(numerical, lo, hi, bins);
    let width = (hi - lo) / bins as f64;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "empirical", "numerical"])?;
    for i in 0..bins {
        w.write_record(&[
            (lo + i as f64 * width).to_string(),
            (lo + (i + 1) as f64 * width).to_string(),
            he[i].to_string(),
            hn[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
