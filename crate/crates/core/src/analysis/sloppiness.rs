//! Parameter sensitivity of simulated mispricing paths.
//!
//! The loss between two parameter sets is the normalised mean squared
//! distance between their mispricing paths simulated with the same noise.
//! Its Hessian in log-parameter coordinates is built from first derivatives
//! only: `H = (2/T) SᵀS` with `S_ti = ∂(δ_t/σ)/∂log θ_i`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ModelKind;
use crate::error::{Error, Result};
use crate::model::ChiarellaParams;
use crate::simulator::simulate_discrete;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SloppinessOptions {
    /// Relative perturbation of each parameter (in log space).
    pub delta_rel: f64,
    pub seed: u64,
    /// Number of monthly observations simulated.
    pub horizon: usize,
    /// Fraction of the path discarded at the start.
    pub burn_in: f64,
}

impl Default for SloppinessOptions {
    fn default() -> Self {
        Self {
            delta_rel: 1e-2,
            seed: 0,
            horizon: 10_000,
            burn_in: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SloppinessReport {
    /// Row-major symmetric matrix.
    pub hessian: Vec<Vec<f64>>,
    /// Descending, divided by the largest.
    pub eigenvalues: Vec<f64>,
    /// Largest eigenvalue before normalisation.
    pub scale: f64,
    /// `eigenvectors[j]` belongs to `eigenvalues[j]`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub param_names: Vec<String>,
    pub decades_spanned: f64,
    /// Parameters left out (zero value) with the reason.
    pub excluded: Vec<String>,
}

impl SloppinessReport {
    /// Builds the spectral part from a symmetric matrix.
    pub fn from_hessian(hessian: Vec<Vec<f64>>, param_names: Vec<String>, excluded: Vec<String>) -> Result<Self> {
        let k = param_names.len();
        if k == 0 || hessian.len() != k || hessian.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("Hessian shape does not match parameter names".into()));
        }
        let m = DMatrix::from_fn(k, k, |i, j| 0.5 * (hessian[i][j] + hessian[j][i]));
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let scale = eig.eigenvalues[order[0]];
        if !(scale > 0.0) {
            return Err(Error::Numerical("Hessian has no positive eigenvalue".into()));
        }
        let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j] / scale).collect();
        let eigenvectors = order
            .iter()
            .map(|&j| eig.eigenvectors.column(j).iter().copied().collect())
            .collect();
        let smallest = eigenvalues[k - 1].max(f64::EPSILON);
        Ok(Self {
            hessian,
            eigenvalues,
            scale,
            eigenvectors,
            param_names,
            decades_spanned: -smallest.log10(),
            excluded,
        })
    }

    /// Largest |component| along `param` over all eigenvectors, with the
    /// index of that eigenvector.
    pub fn alignment(&self, param: &str) -> Option<(usize, f64)> {
        let i = self.param_names.iter().position(|p| p == param)?;
        self.eigenvectors
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v[i].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn entry(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.param_names.iter().position(|p| p == a)?;
        let j = self.param_names.iter().position(|p| p == b)?;
        Some(self.hessian[i][j])
    }
}

type Getter = fn(&ChiarellaParams) -> f64;
type Setter = fn(&mut ChiarellaParams, f64);

fn coordinates(model: ModelKind) -> Vec<(&'static str, Getter, Setter)> {
    let mut c: Vec<(&'static str, Getter, Setter)> = vec![
        ("kappa", |p| p.kappa, |p, v| p.kappa = v),
        ("beta", |p| p.beta, |p, v| p.beta = v),
        ("gamma", |p| p.gamma, |p, v| p.gamma = v),
        ("alpha", |p| p.alpha, |p, v| p.alpha = v),
        ("sigma_N", |p| p.sigma_n, |p, v| p.sigma_n = v),
        ("sigma_V", |p| p.sigma_v, |p, v| p.sigma_v = v),
    ];
    if model == ModelKind::Cubic {
        c.push(("kappa3", |p| p.kappa3, |p, v| p.kappa3 = v));
    }
    c
}

fn mispricing_path(theta: &ChiarellaParams, opts: &SloppinessOptions) -> Result<Vec<f64>> {
    let traj = simulate_discrete(theta, opts.horizon, opts.seed, None)?;
    let skip = (opts.burn_in * opts.horizon as f64).floor() as usize;
    Ok(traj.delta()[skip..].to_vec())
}

/// Gauss–Newton Hessian of the path loss at `theta`.
pub fn sloppiness_hessian(theta: &ChiarellaParams, model: ModelKind, opts: &SloppinessOptions) -> Result<SloppinessReport> {
    theta.validate()?;
    if !(opts.delta_rel > 0.0 && opts.delta_rel < 1.0) {
        return Err(Error::InvalidInput(format!("delta_rel must lie in (0, 1), got {}", opts.delta_rel)));
    }
    if !(0.0..1.0).contains(&opts.burn_in) {
        return Err(Error::InvalidInput(format!("burn-in fraction must lie in [0, 1), got {}", opts.burn_in)));
    }
    let reference = mispricing_path(theta, opts)?;
    if reference.len() < 2 {
        return Err(Error::InvalidInput("horizon too short after burn-in".into()));
    }
    let sigma = stats::std(&reference);
    if !(sigma > 0.0) {
        return Err(Error::Numerical("reference mispricing path is constant".into()));
    }
    let mut names = Vec::new();
    let mut excluded = Vec::new();
    let mut coords = Vec::new();
    for (name, get, set) in coordinates(model) {
        if get(theta) == 0.0 {
            excluded.push(format!("{name}: zero value, log-derivative undefined"));
        } else {
            names.push(name.to_string());
            coords.push((get, set));
        }
    }
    let factor = opts.delta_rel.exp();
    let columns: Vec<Vec<f64>> = coords
        .par_iter()
        .map(|(get, set)| {
            let mut up = *theta;
            set(&mut up, get(theta) * factor);
            let mut down = *theta;
            set(&mut down, get(theta) / factor);
            let a = mispricing_path(&up, opts)?;
            let b = mispricing_path(&down, opts)?;
            Ok(a.iter()
                .zip(&b)
                .map(|(x, y)| (x - y) / (2.0 * opts.delta_rel * sigma))
                .collect())
        })
        .collect::<Result<_>>()?;
    let t = reference.len() as f64;
    let k = columns.len();
    let mut h = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let dot: f64 = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
            h[i][j] = 2.0 * dot / t;
            h[j][i] = h[i][j];
        }
    }
    SloppinessReport::from_hessian(h, names, excluded)
}

/// Entrywise mean of Hessians sharing one parameter ordering.
pub fn average_class_hessian(reports: &[SloppinessReport]) -> Result<SloppinessReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("no Hessians to average".into()))?;
    if reports.iter().any(|r| r.param_names != first.param_names) {
        return Err(Error::InvalidInput("Hessians use different parameter orderings".into()));
    }
    let k = first.param_names.len();
    let n = reports.len() as f64;
    let mut h = vec![vec![0.0; k]; k];
    for r in reports {
        for i in 0..k {
            for j in 0..k {
                h[i][j] += r.hessian[i][j] / n;
            }
        }
    }
    SloppinessReport::from_hessian(h, first.param_names.clone(), first.excluded.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index_params() -> ChiarellaParams {
        ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
    }

    fn quick() -> SloppinessOptions {
        SloppinessOptions {
            horizon: 3000,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn symmetric_psd_and_trace() {
        let r = sloppiness_hessian(&index_params(), ModelKind::Linear, &quick()).unwrap();
        let k = r.param_names.len();
        assert_eq!(k, 6);
        let mut trace = 0.0;
        for i in 0..k {
            trace += r.hessian[i][i];
            for j in 0..k {
                assert!((r.hessian[i][j] - r.hessian[j][i]).abs() < 1e-8);
            }
        }
        assert!(r.eigenvalues.iter().all(|&l| l >= -1e-10));
        let sum: f64 = r.eigenvalues.iter().sum::<f64>() * r.scale;
        assert!((sum - trace).abs() < 1e-8 * trace.max(1.0));
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-15);
        assert!(r.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn zero_parameter_is_excluded() {
        let r = sloppiness_hessian(&index_params(), ModelKind::Cubic, &quick()).unwrap();
        assert!(!r.param_names.contains(&"kappa3".to_string()));
        assert_eq!(r.excluded.len(), 1);
    }

    #[test]
    fn averaging_identity_and_mismatch() {
        let r = sloppiness_hessian(&index_params(), ModelKind::Linear, &quick()).unwrap();
        let one = average_class_hessian(std::slice::from_ref(&r)).unwrap();
        assert_eq!(one.hessian, r.hessian);
        let two = average_class_hessian(&[r.clone(), r.clone()]).unwrap();
        for (a, b) in two.eigenvalues.iter().zip(&r.eigenvalues) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut other = r.clone();
        other.param_names.swap(0, 1);
        assert!(average_class_hessian(&[r, other]).is_err());
        assert!(average_class_hessian(&[]).is_err());
    }
}
