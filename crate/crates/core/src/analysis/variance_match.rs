//! Adjusting calibrated parameters so simulated mispricing matches the
//! empirical mean and variance.

use serde::{Deserialize, Serialize};

use crate::calibration::{loglik_at, ModelKind};
use crate::error::{Error, Result};
use crate::filtering::default_prior_variance;
use crate::model::ChiarellaParams;
use crate::simulator::simulate_discrete;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceMatchOptions {
    pub seed: u64,
    /// Monthly steps per simulation.
    pub horizon: usize,
    pub burn_in: f64,
    /// Relative variance tolerance.
    pub tol: f64,
    /// Largest allowed relative drop of the per-step log-likelihood.
    pub max_loglik_drop: f64,
    /// Log-space step of the numerical gradient.
    pub delta_rel: f64,
    pub max_evals: usize,
}

impl Default for VarianceMatchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 20_000,
            burn_in: 0.1,
            tol: 0.01,
            max_loglik_drop: 0.05,
            delta_rel: 1e-2,
            max_evals: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMatch {
    pub theta: ChiarellaParams,
    pub simulated_mean: f64,
    pub simulated_var: f64,
    /// Added to `v0` so the simulated mean lands on the target.
    pub v0_shift: f64,
    pub loglik_before: f64,
    pub loglik_after: f64,
    /// `(before − after) / |before|` on the per-step log-likelihood.
    pub loglik_drop: f64,
    pub matched: bool,
    /// Step along the normalised gradient in log-parameter space.
    pub step: f64,
    /// Normalised gradient direction over `param_names`.
    pub direction: Vec<f64>,
    pub param_names: Vec<String>,
}

/// Mean and variance of the simulated mispricing after burn-in.
pub fn simulated_moments(theta: &ChiarellaParams, opts: &VarianceMatchOptions) -> Result<(f64, f64)> {
    let traj = simulate_discrete(theta, opts.horizon, opts.seed, None)?;
    let skip = (opts.burn_in * opts.horizon as f64).floor() as usize;
    let d = &traj.delta()[skip..];
    Ok((stats::mean(d), stats::variance(d)))
}

type Getter = fn(&ChiarellaParams) -> f64;
type Setter = fn(&mut ChiarellaParams, f64);

fn free_coordinates(theta: &ChiarellaParams, model: ModelKind) -> Vec<(&'static str, Getter, Setter)> {
    let mut c: Vec<(&'static str, Getter, Setter)> = vec![
        ("kappa", |p| p.kappa, |p, v| p.kappa = v),
        ("beta", |p| p.beta, |p, v| p.beta = v),
        ("sigma_N", |p| p.sigma_n, |p, v| p.sigma_n = v),
        ("sigma_V", |p| p.sigma_v, |p, v| p.sigma_v = v),
    ];
    if model == ModelKind::Cubic {
        c.push(("kappa3", |p| p.kappa3, |p, v| p.kappa3 = v));
    }
    c.retain(|(_, get, _)| get(theta) != 0.0);
    c
}

fn moved(theta: &ChiarellaParams, coords: &[(&'static str, Getter, Setter)], direction: &[f64], s: f64) -> ChiarellaParams {
    let mut out = *theta;
    for ((_, get, set), d) in coords.iter().zip(direction) {
        set(&mut out, get(theta) * (s * d).exp());
    }
    out
}

/// Moves `theta` along the gradient of the simulated mispricing variance
/// (in log-parameters) until the variance is within `tol` of `target_var`,
/// without letting the per-step log-likelihood on `dedrifted` fall by more
/// than `max_loglik_drop`. The mean is matched afterwards through `v0`.
/// When the target is out of reach the best admissible point is returned
/// with `matched = false`.
pub fn variance_match(
    theta: &ChiarellaParams,
    dedrifted: &[f64],
    target_mean: f64,
    target_var: f64,
    model: ModelKind,
    opts: &VarianceMatchOptions,
) -> Result<VarianceMatch> {
    theta.validate()?;
    if !(target_var > 0.0 && target_var.is_finite() && target_mean.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "variance target must be positive and finite, got mean {target_mean}, var {target_var}"
        )));
    }
    let prior_var = default_prior_variance(theta);
    let n_obs = dedrifted.len().saturating_sub(1).max(1) as f64;
    let per_step = |th: &ChiarellaParams| -> Result<f64> { Ok(loglik_at(th, dedrifted, prior_var)? / n_obs) };
    let before = per_step(theta)?;
    let drop_of = |l: f64| (before - l) / before.abs().max(f64::MIN_POSITIVE);

    let coords = free_coordinates(theta, model);
    let names: Vec<String> = coords.iter().map(|(n, _, _)| n.to_string()).collect();
    let (mean0, var0) = simulated_moments(theta, opts)?;
    let mismatch = |v: f64| v / target_var - 1.0;

    let mut best = *theta;
    let mut best_var = var0;
    let mut step = 0.0;
    let mut direction = vec![0.0; coords.len()];
    let mut matched = mismatch(var0).abs() <= opts.tol;

    if !matched && !coords.is_empty() {
        let factor = opts.delta_rel.exp();
        let mut grad = Vec::with_capacity(coords.len());
        for (_, get, set) in &coords {
            let mut up = *theta;
            set(&mut up, get(theta) * factor);
            let mut down = *theta;
            set(&mut down, get(theta) / factor);
            let vu = simulated_moments(&up, opts)?.1;
            let vd = simulated_moments(&down, opts)?.1;
            grad.push((vu - vd) / (2.0 * opts.delta_rel));
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Numerical("variance gradient vanishes".into()));
        }
        let sign = if target_var > var0 { 1.0 } else { -1.0 };
        direction = grad.iter().map(|g| sign * g / norm).collect();

        // Each trial returns the relative variance error and whether the
        // likelihood budget holds.
        let evals = std::cell::Cell::new(0usize);
        let trial = |s: f64| -> Result<(f64, f64, bool, ChiarellaParams)> {
            evals.set(evals.get() + 1);
            let th = moved(theta, &coords, &direction, s);
            th.validate()?;
            let v = simulated_moments(&th, opts)?.1;
            let ok = drop_of(per_step(&th)?) <= opts.max_loglik_drop;
            Ok((mismatch(v), v, ok, th))
        };
        let e0 = mismatch(var0);
        let (mut lo, mut hi) = (0.0, 0.05);
        while evals.get() < opts.max_evals {
            let (e, v, ok, th) = trial(hi)?;
            if !ok {
                break;
            }
            best = th;
            best_var = v;
            step = hi;
            if e.abs() <= opts.tol {
                matched = true;
                break;
            }
            if e.signum() != e0.signum() {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 20.0 {
                break;
            }
        }
        // Bisect between the last admissible point on the near side and
        // the first point past the target or the likelihood budget.
        if !matched {
            let mut far = hi;
            while evals.get() < opts.max_evals && far - lo > 1e-6 {
                let mid = 0.5 * (lo + far);
                let (e, v, ok, th) = trial(mid)?;
                if ok {
                    if e.abs() < mismatch(best_var).abs() {
                        best = th;
                        best_var = v;
                        step = mid;
                    }
                    if e.abs() <= opts.tol {
                        matched = true;
                        break;
                    }
                    if e.signum() == e0.signum() {
                        lo = mid;
                    } else {
                        far = mid;
                    }
                } else {
                    far = mid;
                }
            }
        }
    }

    let (mean_now, var_now) = if step == 0.0 { (mean0, var0) } else { simulated_moments(&best, opts)? };
    let v0_shift = mean_now - target_mean;
    let mut adjusted = best;
    adjusted.v0 += v0_shift;
    let after = per_step(&adjusted)?;
    Ok(VarianceMatch {
        theta: adjusted,
        simulated_mean: mean_now,
        simulated_var: var_now,
        v0_shift,
        loglik_before: before,
        loglik_after: after,
        loglik_drop: drop_of(after),
        matched,
        step,
        direction,
        param_names: names,
    })
}
