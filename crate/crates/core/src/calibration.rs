//! EM calibration, class-level noise ratio and standard errors.
//!
//! For fixed `α`, `γ` the monthly model is a regression of the de-drifted
//! return `r_t = p̃_{t+1} − p̃_t` on `(x_t, τ_t, x_t³)` with `x_t = v_t − p̃_t`
//! and `τ_t = tanh(γ m̃_t)`, plus a random walk for `v`. The expected
//! complete-data log-likelihood is therefore quadratic in `(κ, β, κ₃)` given
//! Gaussian moments of `x_t` up to sixth order, and the M-step is solved in
//! closed form for every free parameter.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CleanSeries;
use crate::error::{Error, Result};
use crate::filtering::{default_prior_variance, smooth_auto, FilterResult, StateSpaceSpec};
use crate::model::ChiarellaParams;
use crate::stats;

/// Lower bound on the noise volatilities; hitting it marks the fit as
/// degenerate.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Slack allowed on the per-step log-likelihood history.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// Minimum series length (ten years of months).
pub const MIN_SERIES_LEN: usize = 120;
/// Bracket of the class noise-ratio search.
pub const SIGMA_RATIO_BRACKET: (f64, f64) = (1.0, 50.0);
/// Tolerance of the golden-section search on `log Σ`.
pub const SIGMA_RATIO_TOL: f64 = 1e-3;

const MAX_BACKTRACK: usize = 30;
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Cubic,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Cubic => "cubic",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "cubic" => Ok(ModelKind::Cubic),
            other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

/// Parameters held fixed during an EM run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmFixed {
    pub alpha: f64,
    pub gamma: f64,
    /// Fixes `σ_V`.
    pub sigma_v: Option<f64>,
    /// Ties `σ_V = σ_N / Σ`.
    pub sigma_ratio: Option<f64>,
    /// Fixes `β`.
    pub beta: Option<f64>,
    pub model: ModelKind,
}

impl EmFixed {
    pub fn new(alpha: f64, gamma: f64, model: ModelKind) -> Self {
        Self {
            alpha,
            gamma,
            sigma_v: None,
            sigma_ratio: None,
            beta: None,
            model,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.sigma_v.is_some() && self.sigma_ratio.is_some() {
            return Err(Error::InvalidParams(
                "sigma_V cannot be both fixed and tied to sigma_N".into(),
            ));
        }
        if let Some(r) = self.sigma_ratio {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidParams(format!("sigma ratio must be positive, got {r}")));
            }
        }
        if let Some(s) = self.sigma_v {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidParams(format!("fixed sigma_V must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the gain in per-step log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; the documented defaults are used when absent.
    pub init: Option<ChiarellaParams>,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 500,
            init: None,
        }
    }
}

/// Standard errors of the calibrated parameters. Entries are `None` when
/// the parameter was held fixed or the curvature is not usable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub kappa: Option<f64>,
    pub kappa3: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "sigma_N")]
    pub sigma_n: Option<f64>,
    #[serde(rename = "sigma_V")]
    pub sigma_v: Option<f64>,
    pub v0: Option<f64>,
    pub gamma: Option<f64>,
}

/// Outcome of a curvature analysis of the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdErrorReport {
    pub errors: ParamErrors,
    /// `(name, −∂²L/∂θ²)` for every free parameter.
    pub curvature: Vec<(String, f64)>,
    /// The negative Hessian was not positive definite.
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub asset: String,
    pub model: ModelKind,
    pub theta: ChiarellaParams,
    pub theta_err: ParamErrors,
    /// Predictive log-likelihood per observation.
    pub loglik_norm: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sigma_ratio: Option<f64>,
    /// Per-step log-likelihood after each iteration, starting with the
    /// initial parameters.
    pub history: Vec<f64>,
    pub degenerate: bool,
    pub negative_beta: bool,
    pub hessian_singular: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCalibration {
    pub sigma_ratio: f64,
    /// Standard deviation of the per-asset optimal ratios.
    pub sigma_ratio_err: f64,
    /// Ratio maximising each asset's own likelihood.
    pub per_asset_ratio: BTreeMap<String, f64>,
    /// Final (step 3) reports.
    pub per_asset: BTreeMap<String, CalibrationReport>,
    /// Free linear fits of step 1.
    pub step1: BTreeMap<String, CalibrationReport>,
    pub model: ModelKind,
    pub alpha: f64,
    pub gamma: f64,
}

/// Fixed inputs of the regression: returns and trend responses.
struct Design {
    obs: Vec<f64>,
    r: Vec<f64>,
    tau: Vec<f64>,
}

impl Design {
    fn new(spec: &StateSpaceSpec) -> Self {
        let p = &spec.params;
        let n = spec.n_obs();
        Self {
            obs: spec.obs.clone(),
            r: (0..n).map(|t| spec.obs[t + 1] - spec.obs[t]).collect(),
            tau: (0..n).map(|t| (p.gamma * spec.trend[t]).tanh()).collect(),
        }
    }

    fn n(&self) -> usize {
        self.r.len()
    }
}

/// Raw Gaussian moments `E[x^k]`, `k = 1 … 6`, for mean `m` and variance `s`.
fn gaussian_moments(m: f64, s: f64) -> [f64; 6] {
    let m2 = m * m;
    [
        m,
        m2 + s,
        m * m2 + 3.0 * m * s,
        m2 * m2 + 6.0 * m2 * s + 3.0 * s * s,
        m * m2 * m2 + 10.0 * m * m2 * s + 15.0 * m * s * s,
        m2 * m2 * m2 + 15.0 * m2 * m2 * s + 45.0 * m2 * s * s + 15.0 * s * s * s,
    ]
}

/// Index of each regression coefficient in the free set.
#[derive(Clone, Copy)]
struct Free {
    beta: bool,
    kappa3: bool,
}

/// Solves the quadratic M-step for `(κ, β, κ₃)`.
fn solve_coefficients(design: &Design, moments: &[[f64; 6]], theta: &ChiarellaParams, free: Free) -> Result<(f64, f64, f64)> {
    // Regressors in order κ, β, κ₃ restricted to the free set.
    let mut cols: Vec<usize> = vec![0];
    if free.beta {
        cols.push(1);
    }
    if free.kappa3 {
        cols.push(2);
    }
    let k = cols.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for t in 0..design.n() {
        let e = &moments[t];
        let tau = design.tau[t];
        let target = design.r[t] - if free.beta { 0.0 } else { theta.beta * tau };
        // E[φ_i φ_j] for φ = (x, τ, x³).
        let cross = |i: usize, j: usize| -> f64 {
            match (i.min(j), i.max(j)) {
                (0, 0) => e[1],
                (0, 1) => tau * e[0],
                (0, 2) => e[3],
                (1, 1) => tau * tau,
                (1, 2) => tau * e[2],
                (2, 2) => e[5],
                _ => unreachable!(),
            }
        };
        let mean = [e[0], tau, e[2]];
        for (ii, &ci) in cols.iter().enumerate() {
            b[ii] += target * mean[ci];
            for (jj, &cj) in cols.iter().enumerate() {
                a[(ii, jj)] += cross(ci, cj);
            }
        }
    }
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Numerical(format!("M-step normal equations: {e}")))?,
    };
    let mut out = (theta.kappa, theta.beta, if free.kappa3 { 0.0 } else { theta.kappa3 });
    for (ii, &ci) in cols.iter().enumerate() {
        match ci {
            0 => out.0 = sol[ii],
            1 => out.1 = sol[ii],
            _ => out.2 = sol[ii],
        }
    }
    if free.kappa3 && out.2 < 0.0 {
        // The objective is convex, so the constrained optimum lies on the
        // κ₃ = 0 face.
        let mut fixed_theta = *theta;
        fixed_theta.kappa3 = 0.0;
        let (kappa, beta, _) = solve_coefficients(
            design,
            moments,
            &fixed_theta,
            Free {
                beta: free.beta,
                kappa3: false,
            },
        )?;
        out = (kappa, beta, 0.0);
    }
    Ok(out)
}

struct MStep {
    theta: ChiarellaParams,
    degenerate: bool,
}

fn m_step(design: &Design, res: &FilterResult, theta: &ChiarellaParams, fixed: &EmFixed) -> Result<MStep> {
    let n = design.n();
    let moments: Vec<[f64; 6]> = (0..n)
        .map(|t| gaussian_moments(res.v_smooth[t] - design.obs[t], res.var_smooth[t]))
        .collect();
    let free = Free {
        beta: fixed.beta.is_none(),
        kappa3: fixed.model == ModelKind::Cubic,
    };
    let (kappa, beta, kappa3) = solve_coefficients(design, &moments, theta, free)?;

    let mut sse = 0.0;
    for t in 0..n {
        let e = &moments[t];
        let y = design.r[t] - beta * design.tau[t];
        sse += y * y - 2.0 * y * (kappa * e[0] + kappa3 * e[2])
            + kappa * kappa * e[1]
            + 2.0 * kappa * kappa3 * e[3]
            + kappa3 * kappa3 * e[5];
    }
    let sse = sse.max(0.0);
    let mut tss = 0.0;
    for t in 0..n.saturating_sub(1) {
        let d = res.v_smooth[t + 1] - res.v_smooth[t];
        tss += d * d + res.var_smooth[t + 1] + res.var_smooth[t] - 2.0 * res.lag_cov[t];
    }
    let tss = tss.max(0.0);
    let n_obs = n as f64;
    let n_trans = n.saturating_sub(1) as f64;

    let (mut sigma_n, mut sigma_v) = match (fixed.sigma_v, fixed.sigma_ratio) {
        (Some(sv), _) => ((sse / n_obs).sqrt(), sv),
        (None, Some(ratio)) => {
            let s2 = (sse + ratio * ratio * tss) / (n_obs + n_trans);
            (s2.sqrt(), s2.sqrt() / ratio)
        }
        (None, None) => ((sse / n_obs).sqrt(), (tss / n_trans.max(1.0)).sqrt()),
    };
    let mut degenerate = false;
    if sigma_n < SIGMA_FLOOR {
        sigma_n = SIGMA_FLOOR;
        if let Some(ratio) = fixed.sigma_ratio {
            sigma_v = sigma_n / ratio;
        }
        degenerate = true;
    }
    let next = ChiarellaParams {
        kappa,
        kappa3,
        beta,
        gamma: fixed.gamma,
        alpha: fixed.alpha,
        sigma_n,
        sigma_v,
        v0: res.v_smooth[0],
    };
    let big = [next.kappa, next.kappa3, next.beta, next.sigma_n, next.sigma_v, next.v0]
        .iter()
        .any(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT);
    if big {
        return Err(Error::Numerical(format!("EM parameters diverged: {next:?}")));
    }
    Ok(MStep { theta: next, degenerate })
}

fn blend(a: &ChiarellaParams, b: &ChiarellaParams, w: f64) -> ChiarellaParams {
    let mix = |x: f64, y: f64| x + w * (y - x);
    ChiarellaParams {
        kappa: mix(a.kappa, b.kappa),
        kappa3: mix(a.kappa3, b.kappa3),
        beta: mix(a.beta, b.beta),
        gamma: b.gamma,
        alpha: b.alpha,
        sigma_n: mix(a.sigma_n, b.sigma_n),
        sigma_v: mix(a.sigma_v, b.sigma_v),
        v0: mix(a.v0, b.v0),
    }
}

/// Documented EM starting point for a de-drifted series.
pub fn default_init(dedrifted: &[f64], fixed: &EmFixed) -> ChiarellaParams {
    let sigma_n = stats::std(&stats::diff(dedrifted)).max(SIGMA_FLOOR);
    let sigma_v = match (fixed.sigma_v, fixed.sigma_ratio) {
        (Some(s), _) => s,
        (None, Some(r)) => sigma_n / r,
        (None, None) => sigma_n / 4.0,
    };
    ChiarellaParams {
        kappa: 0.05,
        kappa3: if fixed.model == ModelKind::Cubic { 0.5 } else { 0.0 },
        beta: fixed.beta.unwrap_or(0.05),
        gamma: fixed.gamma,
        alpha: fixed.alpha,
        sigma_n,
        sigma_v,
        v0: dedrifted.first().copied().unwrap_or(0.0),
    }
}

/// Applies the constraints of `fixed` to a starting point.
fn conform(mut theta: ChiarellaParams, fixed: &EmFixed) -> ChiarellaParams {
    theta.alpha = fixed.alpha;
    theta.gamma = fixed.gamma;
    if let Some(b) = fixed.beta {
        theta.beta = b;
    }
    if let Some(s) = fixed.sigma_v {
        theta.sigma_v = s;
    }
    if let Some(r) = fixed.sigma_ratio {
        theta.sigma_v = theta.sigma_n / r;
    }
    if fixed.model == ModelKind::Linear {
        theta.kappa3 = 0.0;
    } else if theta.kappa3 <= 0.0 {
        theta.kappa3 = 0.5;
    }
    theta
}

/// Expectation–maximisation fit of one de-drifted series.
pub fn em_fit(series: &CleanSeries, fixed: &EmFixed, opts: &EmOptions) -> Result<CalibrationReport> {
    em_fit_values(&series.id, &series.dedrifted, fixed, opts)
}

/// [`em_fit`] on a bare de-drifted series.
pub fn em_fit_values(asset: &str, dedrifted: &[f64], fixed: &EmFixed, opts: &EmOptions) -> Result<CalibrationReport> {
    fixed.validate()?;
    if dedrifted.len() < MIN_SERIES_LEN {
        return Err(Error::InvalidInput(format!(
            "{asset}: EM needs at least {MIN_SERIES_LEN} months, got {}",
            dedrifted.len()
        )));
    }
    let init = conform(opts.init.unwrap_or_else(|| default_init(dedrifted, fixed)), fixed);
    init.validate()?;
    let prior_var = default_prior_variance(&init).max(SIGMA_FLOOR * SIGMA_FLOOR);
    let spec = StateSpaceSpec::with_prior(init, dedrifted.to_vec(), init.v0, prior_var)?;
    let design = Design::new(&spec);
    let n_obs = spec.n_obs() as f64;

    let mut theta = init;
    let mut res = smooth_auto(&spec)?;
    let mut history = vec![res.loglik / n_obs];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let step = m_step(&design, &res, &theta, fixed)?;
        let old = res.loglik / n_obs;
        let mut candidate = step.theta;
        let mut new_res = smooth_auto(&spec.reparametrize(candidate)?)?;
        let mut new = new_res.loglik / n_obs;
        if new < old - MONOTONE_SLACK {
            match fixed.model {
                ModelKind::Linear if !step.degenerate => {
                    return Err(Error::NonMonotoneLikelihood {
                        iteration: iterations,
                        drop: old - new,
                    });
                }
                _ => {
                    // The unscented E-step is approximate: shrink the step
                    // towards the previous parameters until the likelihood
                    // no longer drops.
                    let mut w = 1.0;
                    let mut recovered = false;
                    for _ in 0..MAX_BACKTRACK {
                        w *= 0.5;
                        candidate = blend(&theta, &step.theta, w);
                        new_res = smooth_auto(&spec.reparametrize(candidate)?)?;
                        new = new_res.loglik / n_obs;
                        if new >= old - MONOTONE_SLACK {
                            recovered = true;
                            break;
                        }
                    }
                    if !recovered {
                        warnings.push(format!(
                            "iteration {iterations}: no likelihood-improving step; stopped at previous parameters"
                        ));
                        converged = true;
                        break;
                    }
                }
            }
        }
        log::debug!("stage=em asset={asset} iteration={iterations} loglik={new:.9}");
        theta = candidate;
        res = new_res;
        history.push(new);
        if step.degenerate {
            degenerate = true;
            warnings.push("sigma_N reached its floor: degenerate series".into());
            break;
        }
        if new - old < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged && !degenerate {
        warnings.push(format!("EM stopped at the iteration cap ({}) before converging", opts.max_iter));
    }
    let negative_beta = theta.beta < 0.0;
    if negative_beta {
        warnings.push("negative beta".into());
    }
    Ok(CalibrationReport {
        asset: asset.to_string(),
        model: fixed.model,
        theta,
        theta_err: ParamErrors::default(),
        loglik_norm: res.loglik / n_obs,
        loglik: res.loglik,
        iterations,
        converged,
        sigma_ratio: fixed.sigma_ratio,
        history,
        degenerate,
        negative_beta,
        hessian_singular: false,
        warnings,
    })
}

/// Total log-likelihood of `theta` on a series, with the prior variance
/// `prior_var` for `v_0`.
pub fn loglik_at(theta: &ChiarellaParams, dedrifted: &[f64], prior_var: f64) -> Result<f64> {
    let spec = StateSpaceSpec::with_prior(*theta, dedrifted.to_vec(), theta.v0, prior_var)?;
    Ok(crate::filtering::filter_auto(&spec)?.loglik)
}

/// Parameters entering the curvature analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Coord {
    Kappa,
    Kappa3,
    Beta,
    SigmaN,
    SigmaV,
    V0,
}

impl Coord {
    fn name(&self) -> &'static str {
        match self {
            Coord::Kappa => "kappa",
            Coord::Kappa3 => "kappa3",
            Coord::Beta => "beta",
            Coord::SigmaN => "sigma_N",
            Coord::SigmaV => "sigma_V",
            Coord::V0 => "v0",
        }
    }

    fn floor(&self) -> f64 {
        match self {
            Coord::Kappa => 0.01,
            Coord::Kappa3 => 0.1,
            Coord::Beta => 0.01,
            Coord::SigmaN | Coord::SigmaV => 1e-3,
            Coord::V0 => 0.1,
        }
    }
}

fn get(theta: &ChiarellaParams, c: Coord) -> f64 {
    match c {
        Coord::Kappa => theta.kappa,
        Coord::Kappa3 => theta.kappa3,
        Coord::Beta => theta.beta,
        Coord::SigmaN => theta.sigma_n,
        Coord::SigmaV => theta.sigma_v,
        Coord::V0 => theta.v0,
    }
}

fn set(theta: &mut ChiarellaParams, c: Coord, v: f64, ratio: Option<f64>) {
    match c {
        Coord::Kappa => theta.kappa = v,
        Coord::Kappa3 => theta.kappa3 = v,
        Coord::Beta => theta.beta = v,
        Coord::SigmaN => {
            theta.sigma_n = v;
            if let Some(r) = ratio {
                theta.sigma_v = v / r;
            }
        }
        Coord::SigmaV => theta.sigma_v = v,
        Coord::V0 => theta.v0 = v,
    }
}

/// Relative finite-difference step of the Hessian.
pub const HESSIAN_REL_STEP: f64 = 1e-4;

/// Standard errors from the central-difference Hessian of the total
/// log-likelihood at `theta`. Fixed members of `fixed` are excluded; with a
/// tied ratio `σ_V` follows `σ_N`. `gamma_err` (from the tanh fit) is passed
/// through.
pub fn std_errors(
    theta: &ChiarellaParams,
    dedrifted: &[f64],
    fixed: &EmFixed,
    prior_var: f64,
    gamma_err: Option<f64>,
) -> Result<StdErrorReport> {
    let mut coords = vec![Coord::Kappa];
    if fixed.model == ModelKind::Cubic {
        coords.push(Coord::Kappa3);
    }
    if fixed.beta.is_none() {
        coords.push(Coord::Beta);
    }
    coords.push(Coord::SigmaN);
    if fixed.sigma_v.is_none() && fixed.sigma_ratio.is_none() {
        coords.push(Coord::SigmaV);
    }
    coords.push(Coord::V0);
    let k = coords.len();
    let steps: Vec<f64> = coords
        .iter()
        .map(|c| HESSIAN_REL_STEP * get(theta, *c).abs().max(c.floor()))
        .collect();
    let eval = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut th = *theta;
        for &(i, d) in shifts {
            let c = coords[i];
            set(&mut th, c, get(theta, c) + d, fixed.sigma_ratio);
        }
        loglik_at(&th, dedrifted, prior_var)
    };
    let center = eval(&[])?;
    let mut h = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let hi = steps[i];
        let plus = eval(&[(i, hi)])?;
        let minus = eval(&[(i, -hi)])?;
        h[(i, i)] = (plus - 2.0 * center + minus) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let pp = eval(&[(i, hi), (j, hj)])?;
            let pm = eval(&[(i, hi), (j, -hj)])?;
            let mp = eval(&[(i, -hi), (j, hj)])?;
            let mm = eval(&[(i, -hi), (j, -hj)])?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let neg = -h;
    let curvature: Vec<(String, f64)> = coords
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name().to_string(), neg[(i, i)]))
        .collect();
    let eig = neg.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min_ev = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let singular = !(min_ev > 1e-10 * max_ev) || max_ev == 0.0;
    let mut errors = ParamErrors {
        gamma: gamma_err,
        ..Default::default()
    };
    let cov = if singular { None } else { neg.clone().try_inverse() };
    for (i, c) in coords.iter().enumerate() {
        let e = match &cov {
            Some(cov) if cov[(i, i)] > 0.0 => Some(cov[(i, i)].sqrt()),
            _ => None,
        };
        match c {
            Coord::Kappa => errors.kappa = e,
            Coord::Kappa3 => errors.kappa3 = e,
            Coord::Beta => errors.beta = e,
            Coord::SigmaN => errors.sigma_n = e,
            Coord::SigmaV => errors.sigma_v = e,
            Coord::V0 => errors.v0 = e,
        }
    }
    Ok(StdErrorReport {
        errors,
        curvature,
        singular,
    })
}

/// Gaussian error propagation for `σ_V = σ_N / Σ`.
pub fn sigma_v_error(sigma_n: f64, delta_sigma_n: f64, sigma_ratio: f64, delta_sigma_ratio: f64) -> f64 {
    let a = sigma_n / (sigma_ratio * sigma_ratio) * delta_sigma_ratio;
    let b = delta_sigma_n / sigma_ratio;
    (a * a + b * b).sqrt()
}

/// Golden-section maximisation of `f` over `[lo, hi]` until the bracket is
/// narrower than `tol`.
pub fn golden_max<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Log-likelihood of an asset's step-1 parameters with `σ_V = σ_N / Σ`.
fn ratio_loglik(report: &CalibrationReport, dedrifted: &[f64], ratio: f64, prior_var: f64) -> Result<f64> {
    let mut theta = report.theta;
    theta.sigma_v = theta.sigma_n / ratio;
    loglik_at(&theta, dedrifted, prior_var)
}

fn prior_var_for(report: &CalibrationReport, dedrifted: &[f64]) -> f64 {
    let fixed = EmFixed::new(report.theta.alpha, report.theta.gamma, ModelKind::Linear);
    default_prior_variance(&default_init(dedrifted, &fixed)).max(SIGMA_FLOOR * SIGMA_FLOOR)
}

/// Class noise ratio maximising the summed log-likelihood, its spread across
/// assets, and each asset's own optimum.
pub fn calibrate_class_sigma(members: &[(&CleanSeries, &CalibrationReport)]) -> Result<(f64, f64, BTreeMap<String, f64>)> {
    if members.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "class noise ratio needs at least two assets, got {}",
            members.len()
        )));
    }
    let (lo, hi) = SIGMA_RATIO_BRACKET;
    let priors: Vec<f64> = members.iter().map(|(s, r)| prior_var_for(r, &s.dedrifted)).collect();
    let total = |log_ratio: f64| -> Result<f64> {
        let ratio = log_ratio.exp();
        members
            .par_iter()
            .zip(priors.par_iter())
            .map(|((s, r), pv)| ratio_loglik(r, &s.dedrifted, ratio, *pv))
            .collect::<Result<Vec<f64>>>()
            .map(|v| v.iter().sum())
    };
    let best = golden_max(total, lo.ln(), hi.ln(), SIGMA_RATIO_TOL)?.exp();
    let per_asset: Vec<(String, f64)> = members
        .par_iter()
        .zip(priors.par_iter())
        .map(|((s, r), pv)| {
            golden_max(
                |lr| ratio_loglik(r, &s.dedrifted, lr.exp(), *pv),
                lo.ln(),
                hi.ln(),
                SIGMA_RATIO_TOL,
            )
            .map(|lr| (s.id.clone(), lr.exp()))
        })
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = per_asset.iter().map(|(_, r)| *r).collect();
    let spread = stats::sample_std(&ratios);
    Ok((best, spread, per_asset.into_iter().collect()))
}

/// Fills in standard errors on a report.
pub fn attach_std_errors(report: &mut CalibrationReport, dedrifted: &[f64], fixed: &EmFixed, gamma_err: Option<f64>) -> Result<()> {
    let prior_var = prior_var_for(report, dedrifted);
    let se = std_errors(&report.theta, dedrifted, fixed, prior_var, gamma_err)?;
    report.theta_err = se.errors;
    report.hessian_singular = se.singular;
    if se.singular {
        let detail: Vec<String> = se.curvature.iter().map(|(n, c)| format!("{n}={c:.3e}")).collect();
        report
            .warnings
            .push(format!("likelihood Hessian not invertible; curvatures: {}", detail.join(", ")));
    }
    Ok(())
}

/// Options of the class pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassOptions {
    pub em: EmOptions,
    /// Compute Hessian standard errors for the final reports.
    pub std_errors: bool,
    /// Standard error of `γ` from the tanh fit.
    pub gamma_err: Option<f64>,
}

impl Default for ClassOptions {
    fn default() -> Self {
        Self {
            em: EmOptions::default(),
            std_errors: true,
            gamma_err: None,
        }
    }
}

/// Step 1 (free linear fits), step 2 (class ratio) and step 3 (refit with
/// `σ_V = σ_N/Σ` in the requested model).
pub fn three_step_calibrate(
    class: &[CleanSeries],
    alpha: f64,
    gamma: f64,
    model: ModelKind,
    opts: &ClassOptions,
) -> Result<ClassCalibration> {
    if class.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "three-step calibration needs at least two assets, got {}",
            class.len()
        )));
    }
    let mut ids: Vec<&str> = class.iter().map(|s| s.id.as_str()).collect();
    ids.sort();
    ids.dedup();
    if ids.len() != class.len() {
        return Err(Error::InvalidInput("asset ids within a class must be unique".into()));
    }
    let free = EmFixed::new(alpha, gamma, ModelKind::Linear);
    let step1: Vec<CalibrationReport> = class
        .par_iter()
        .map(|s| em_fit(s, &free, &opts.em))
        .collect::<Result<_>>()?;
    let members: Vec<(&CleanSeries, &CalibrationReport)> = class.iter().zip(step1.iter()).collect();
    let (ratio, ratio_err, per_asset_ratio) = calibrate_class_sigma(&members)?;

    let tied = EmFixed {
        sigma_ratio: Some(ratio),
        ..EmFixed::new(alpha, gamma, model)
    };
    let step3: Vec<CalibrationReport> = class
        .par_iter()
        .zip(step1.par_iter())
        .map(|(s, r1)| {
            let mut init = r1.theta;
            init.sigma_v = init.sigma_n / ratio;
            if model == ModelKind::Cubic {
                init.kappa3 = 0.5;
            }
            let em = EmOptions {
                init: Some(init),
                ..opts.em
            };
            let mut rep = em_fit(s, &tied, &em)?;
            if opts.std_errors {
                attach_std_errors(&mut rep, &s.dedrifted, &tied, opts.gamma_err)?;
                if let Some(dsn) = rep.theta_err.sigma_n {
                    rep.theta_err.sigma_v = Some(sigma_v_error(rep.theta.sigma_n, dsn, ratio, ratio_err));
                }
            }
            Ok(rep)
        })
        .collect::<Result<_>>()?;

    Ok(ClassCalibration {
        sigma_ratio: ratio,
        sigma_ratio_err: ratio_err,
        per_asset_ratio,
        per_asset: step3.into_iter().map(|r| (r.asset.clone(), r)).collect(),
        step1: step1.into_iter().map(|r| (r.asset.clone(), r)).collect(),
        model,
        alpha,
        gamma,
    })
}

/// Writes `asset,kappa,kappa3,beta,gamma,sigma_N,sigma_V,v0,loglik_norm`.
pub fn write_table_csv<'a, W: Write>(writer: W, reports: impl IntoIterator<Item = &'a CalibrationReport>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["asset", "kappa", "kappa3", "beta", "gamma", "sigma_N", "sigma_V", "v0", "loglik_norm"])?;
    for r in reports {
        let t = &r.theta;
        w.write_record(&[
            r.asset.clone(),
            t.kappa.to_string(),
            t.kappa3.to_string(),
            t.beta.to_string(),
            t.gamma.to_string(),
            t.sigma_n.to_string(),
            t.sigma_v.to_string(),
            t.v0.to_string(),
            r.loglik_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::simulate_discrete;
    use chrono::NaiveDate;

    fn index_params() -> ChiarellaParams {
        ChiarellaParams::linear(0.027, 0.2, 0.076, 4.168).with_noise(0.043, 0.011)
    }

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(1800, 1, 1).unwrap()
    }

    fn simulated(params: &ChiarellaParams, n: usize, seed: u64, id: &str) -> CleanSeries {
        let traj = simulate_discrete(params, n, seed, None).unwrap();
        CleanSeries::from_dedrifted(id, start(), traj.p).unwrap()
    }

    #[test]
    fn sigma_v_error_examples() {
        assert!((sigma_v_error(0.043, 0.001, 3.87, 0.61) - 0.001_770_323_285_6).abs() < 1e-12);
        assert!((sigma_v_error(0.043, 0.001, 4.0, 0.0) - 0.001 / 4.0).abs() < 1e-15);
        assert!((sigma_v_error(0.043, 0.0, 4.0, 0.5) - 0.043 * 0.5 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_moments_match_quadrature() {
        let (m, s) = (0.3, 0.2);
        let e = gaussian_moments(m, s);
        let n = 20_001;
        let (lo, hi) = (m - 12.0 * s.sqrt(), m + 12.0 * s.sqrt());
        let dx = (hi - lo) / (n - 1) as f64;
        for k in 1..=6 {
            let q: f64 = (0..n)
                .map(|i| {
                    let x = lo + i as f64 * dx;
                    x.powi(k as i32) * (-(x - m).powi(2) / (2.0 * s)).exp() / (2.0 * std::f64::consts::PI * s).sqrt()
                })
                .sum::<f64>()
                * dx;
            assert!((e[k - 1] - q).abs() < 1e-10, "k={k}: {} vs {q}", e[k - 1]);
        }
    }

    #[test]
    fn em_is_monotone_and_recovers_us_row() {
        let params = index_params();
        let s = simulated(&params, 2676, 42, "us");
        let fixed = EmFixed::new(params.alpha, params.gamma, ModelKind::Linear);
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!(rep.history.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK));
        assert!((rep.theta.kappa - 0.027).abs() < 3.0 * 0.007, "{:?}", rep.theta);
        assert!((rep.theta.beta - 0.076).abs() < 3.0 * 0.023, "{:?}", rep.theta);
        assert!((rep.theta.sigma_n - 0.043).abs() < 3.0 * 0.001, "{:?}", rep.theta);
        assert!(rep.converged);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let s = CleanSeries::from_dedrifted("flat", start(), vec![0.7; 200]).unwrap();
        let fixed = EmFixed::new(0.2, 4.0, ModelKind::Linear);
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!(rep.degenerate);
        assert!(rep.theta.sigma_n <= SIGMA_FLOOR * (1.0 + 1e-12));
    }

    #[test]
    fn short_series_is_rejected() {
        let s = CleanSeries::from_dedrifted("short", start(), vec![0.0; 50]).unwrap();
        let fixed = EmFixed::new(0.2, 4.0, ModelKind::Linear);
        assert!(em_fit(&s, &fixed, &EmOptions::default()).is_err());
    }

    #[test]
    fn pure_mean_reversion_kappa_recovered() {
        let params = ChiarellaParams::linear(0.05, 0.2, 0.0, 4.0).with_noise(0.04, 0.01);
        let mut est = Vec::new();
        for seed in 0..20 {
            let s = simulated(&params, 2000, 100 + seed, "mr");
            let fixed = EmFixed {
                sigma_v: Some(params.sigma_v),
                beta: Some(0.0),
                ..EmFixed::new(params.alpha, params.gamma, ModelKind::Linear)
            };
            let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
            est.push(rep.theta.kappa);
        }
        let med = stats::median(&est);
        assert!((med - params.kappa).abs() / params.kappa < 0.10, "{est:?}");
    }

    #[test]
    fn tied_ratio_is_respected() {
        let params = index_params();
        let s = simulated(&params, 600, 7, "a");
        let fixed = EmFixed {
            sigma_ratio: Some(4.0),
            ..EmFixed::new(params.alpha, params.gamma, ModelKind::Linear)
        };
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!((rep.theta.sigma_v * 4.0 - rep.theta.sigma_n).abs() < 1e-12);
    }

    #[test]
    fn cubic_em_keeps_history_monotone() {
        let params = ChiarellaParams {
            kappa: -0.002,
            kappa3: 0.222,
            ..index_params()
        };
        let s = simulated(&params, 1500, 9, "c");
        let fixed = EmFixed::new(params.alpha, params.gamma, ModelKind::Cubic);
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!(rep.history.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK));
        assert!(rep.theta.kappa3 >= 0.0);
    }

    #[test]
    fn beta_gamma_small_signal_degeneracy() {
        let params = index_params();
        let traj = simulate_discrete(&params, 1000, 3, None).unwrap();
        let spec = StateSpaceSpec::new(params, traj.p.clone()).unwrap();
        let max_gm = spec.trend.iter().fold(0.0f64, |a, m| a.max((params.gamma * m).abs()));
        // Choose γ so that every |γ m̃| < 0.2.
        let gamma = 0.19 / (max_gm / params.gamma);
        let base = ChiarellaParams { gamma, ..params };
        let swapped = ChiarellaParams {
            beta: 2.0 * params.beta,
            gamma: gamma / 2.0,
            ..params
        };
        let pv = default_prior_variance(&params);
        let n = (traj.p.len() - 1) as f64;
        let a = loglik_at(&base, &traj.p, pv).unwrap() / n;
        let b = loglik_at(&swapped, &traj.p, pv).unwrap() / n;
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn std_errors_flag_flat_beta_direction() {
        let params = index_params();
        let s = simulated(&params, 600, 2, "f");
        let flat = ChiarellaParams { gamma: 1e-12, ..params };
        let fixed = EmFixed::new(flat.alpha, flat.gamma, ModelKind::Linear);
        let se = std_errors(&flat, &s.dedrifted, &fixed, default_prior_variance(&flat), None).unwrap();
        assert!(se.singular);
        assert!(se.errors.beta.is_none());
    }

    #[test]
    fn class_ratio_needs_two_assets() {
        let params = index_params();
        let s = simulated(&params, 300, 2, "only");
        let fixed = EmFixed::new(params.alpha, params.gamma, ModelKind::Linear);
        let rep = em_fit(&s, &fixed, &EmOptions::default()).unwrap();
        assert!(calibrate_class_sigma(&[(&s, &rep)]).is_err());
    }

    #[test]
    fn golden_section_finds_peak() {
        let x = golden_max(|x| Ok(-(x - 1.3f64).powi(2)), 0.0, 4.0, 1e-6).unwrap();
        assert!((x - 1.3).abs() < 1e-5);
    }

    #[test]
    fn table_csv_header() {
        let params = index_params();
        let s = simulated(&params, 200, 2, "x");
        let rep = em_fit(&s, &EmFixed::new(0.2, 4.168, ModelKind::Linear), &EmOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_table_csv(&mut buf, [&rep]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("asset,kappa,kappa3,beta,gamma,sigma_N,sigma_V,v0,loglik_norm\nx,"));
    }
}
