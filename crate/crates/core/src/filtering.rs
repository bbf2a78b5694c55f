//! Inference of the latent value from de-drifted prices.
//!
//! With the trend `m̃` computed from observed prices, the monthly model reads
//!
//! ```text
//! z_t := p̃_{t+1} − p̃_t − β tanh(γ m̃_t) = f(v_t − p̃_t) + η^N_t
//! v_{t+1} = v_t + η^V_t
//! ```
//!
//! so the hidden state is the scalar `v_t` and the trend term acts as a known
//! control. For the linear demand the Kalman filter is exact; the cubic
//! demand uses a three-point unscented transform.
//!
//! A series of `n` prices yields `n − 1` observations `z_0 … z_{n−2}`, each
//! informative about `v_0 … v_{n−2}`.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChiarellaParams;
use crate::trend::trend_from_prices;

/// Floor on the predictive variance before evaluating the log-density.
pub const PREDICTIVE_VARIANCE_FLOOR: f64 = 1e-14;

/// Spread of the unscented transform: sigma points `a ± √((1+λ)P)` with
/// `1 + λ = 3`, which reproduces the Gaussian fourth moment in one dimension.
pub const UT_SPREAD: f64 = 3.0;
const UT_W0: f64 = 1.0 - 1.0 / UT_SPREAD;
const UT_W1: f64 = 0.5 / UT_SPREAD;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Inputs of a filtering pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceSpec {
    pub params: ChiarellaParams,
    /// De-drifted log-prices `p̃`.
    pub obs: Vec<f64>,
    /// Trend `m̃` derived from `obs` with the decay `params.alpha`.
    pub trend: Vec<f64>,
    /// Prior mean of `v_0`.
    pub v0_mean: f64,
    /// Prior variance of `v_0`.
    pub v0_var: f64,
}

/// Default prior variance `(5σ_V)²`, or `σ_N²` when `σ_V = 0`.
pub fn default_prior_variance(params: &ChiarellaParams) -> f64 {
    if params.sigma_v > 0.0 {
        (5.0 * params.sigma_v).powi(2)
    } else {
        params.sigma_n.powi(2)
    }
}

impl StateSpaceSpec {
    /// Builds the trend from `obs` and uses the default prior centred on
    /// `params.v0`.
    pub fn new(params: ChiarellaParams, obs: Vec<f64>) -> Result<Self> {
        let v0_var = default_prior_variance(&params);
        Self::with_prior(params, obs, params.v0, v0_var)
    }

    pub fn with_prior(params: ChiarellaParams, obs: Vec<f64>, v0_mean: f64, v0_var: f64) -> Result<Self> {
        let trend = trend_from_prices(&obs, params.alpha)?;
        let spec = Self {
            params,
            obs,
            trend,
            v0_mean,
            v0_var,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same observations and trend under different parameters. The trend is
    /// rebuilt only if the decay changed.
    pub fn reparametrize(&self, params: ChiarellaParams) -> Result<Self> {
        let trend = if params.alpha == self.params.alpha {
            self.trend.clone()
        } else {
            trend_from_prices(&self.obs, params.alpha)?
        };
        let spec = Self {
            params,
            obs: self.obs.clone(),
            trend,
            v0_mean: params.v0,
            v0_var: self.v0_var,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.params.sigma_n > 0.0) {
            return Err(Error::InvalidParams(
                "filtering requires sigma_N > 0".into(),
            ));
        }
        if self.obs.len() < 2 {
            return Err(Error::InvalidInput("filtering needs at least two prices".into()));
        }
        if self.trend.len() != self.obs.len() {
            return Err(Error::InvalidInput("trend and observations differ in length".into()));
        }
        if let Some(i) = self.obs.iter().chain(&self.trend).position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite input at index {i}")));
        }
        if !(self.v0_var > 0.0 && self.v0_var.is_finite() && self.v0_mean.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prior for v_0 must have finite mean and positive variance, got ({}, {})",
                self.v0_mean, self.v0_var
            )));
        }
        Ok(())
    }

    /// Number of observations `z_t`.
    pub fn n_obs(&self) -> usize {
        self.obs.len() - 1
    }

    /// `z_t = p̃_{t+1} − p̃_t − β tanh(γ m̃_t)`.
    pub fn observations(&self) -> Vec<f64> {
        let p = &self.params;
        (0..self.n_obs())
            .map(|t| self.obs[t + 1] - self.obs[t] - p.beta * (p.gamma * self.trend[t]).tanh())
            .collect()
    }
}

/// Filtered and smoothed value moments.
///
/// Vectors of length `n` are indexed by price time: `v_filt[t]` is the mean
/// of `v_t` given `p̃_0 … p̃_t`. The update vectors, of length `n − 1`, hold
/// the moments of `v_t` after observing `z_t` (i.e. given `p̃_0 … p̃_{t+1}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub v_filt: Vec<f64>,
    pub var_filt: Vec<f64>,
    pub v_upd: Vec<f64>,
    pub var_upd: Vec<f64>,
    /// Empty until a smoothing pass has run.
    pub v_smooth: Vec<f64>,
    pub var_smooth: Vec<f64>,
    /// `Cov(v_t, v_{t+1} | all data)` for `t = 0 … n−3`.
    pub lag_cov: Vec<f64>,
    /// Predictive means and variances of `z_t`.
    pub z_pred: Vec<f64>,
    pub z_var: Vec<f64>,
    /// Total predictive log-likelihood.
    pub loglik: f64,
    /// `loglik` divided by the number of observations.
    pub loglik_per_step: f64,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.v_filt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_filt.is_empty()
    }

    pub fn is_smoothed(&self) -> bool {
        !self.v_smooth.is_empty()
    }

    /// Writes `date,v_filt,sd_filt,v_smooth,sd_smooth`. `offset` (typically
    /// the drift `G_t`) is added to the means.
    pub fn write_csv<W: Write>(&self, writer: W, dates: &[NaiveDate], offset: Option<&[f64]>) -> Result<()> {
        if dates.len() != self.len() || offset.is_some_and(|o| o.len() != self.len()) {
            return Err(Error::InvalidInput("dates or offset do not match the filter length".into()));
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "v_filt", "sd_filt", "v_smooth", "sd_smooth"])?;
        for t in 0..self.len() {
            let g = offset.map_or(0.0, |o| o[t]);
            let (vs, ss) = if self.is_smoothed() {
                ((self.v_smooth[t] + g).to_string(), self.var_smooth[t].sqrt().to_string())
            } else {
                (String::new(), String::new())
            };
            w.write_record(&[
                dates[t].format("%Y-%m-%d").to_string(),
                (self.v_filt[t] + g).to_string(),
                self.var_filt[t].sqrt().to_string(),
                vs,
                ss,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moments of the observation given a prior `(a, P)` on the value.
struct Projection {
    z_mean: f64,
    z_var: f64,
    cross: f64,
}

fn forward<F>(spec: &StateSpaceSpec, project: F) -> Result<FilterResult>
where
    F: Fn(f64, f64, f64) -> Projection,
{
    spec.validate()?;
    let params = &spec.params;
    let z = spec.observations();
    let n = spec.obs.len();
    let sn2 = params.sigma_n * params.sigma_n;
    let sv2 = params.sigma_v * params.sigma_v;

    let mut v_filt = Vec::with_capacity(n);
    let mut var_filt = Vec::with_capacity(n);
    let mut v_upd = Vec::with_capacity(n - 1);
    let mut var_upd = Vec::with_capacity(n - 1);
    let mut z_pred = Vec::with_capacity(n - 1);
    let mut z_var = Vec::with_capacity(n - 1);
    let mut loglik = 0.0;

    let (mut a, mut p) = (spec.v0_mean, spec.v0_var);
    for (t, &zt) in z.iter().enumerate() {
        v_filt.push(a);
        var_filt.push(p);
        let proj = project(a, p, spec.obs[t]);
        let s = (proj.z_var + sn2).max(PREDICTIVE_VARIANCE_FLOOR);
        let innov = zt - proj.z_mean;
        loglik -= 0.5 * (LN_2PI + s.ln() + innov * innov / s);
        let k = proj.cross / s;
        let a_new = a + k * innov;
        let p_new = p - k * proj.cross;
        if !(p_new > 0.0) || !a_new.is_finite() {
            return Err(Error::CovarianceNotPositive {
                step: t,
                variance: p_new,
            });
        }
        v_upd.push(a_new);
        var_upd.push(p_new);
        z_pred.push(proj.z_mean);
        z_var.push(s);
        a = a_new;
        p = p_new + sv2;
    }
    v_filt.push(a);
    var_filt.push(p);
    if !loglik.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite".into()));
    }
    let n_obs = z.len() as f64;
    Ok(FilterResult {
        v_filt,
        var_filt,
        v_upd,
        var_upd,
        v_smooth: Vec::new(),
        var_smooth: Vec::new(),
        lag_cov: Vec::new(),
        z_pred,
        z_var,
        loglik,
        loglik_per_step: loglik / n_obs,
    })
}

/// Exact Kalman filter of the linear model.
pub fn kalman_filter(spec: &StateSpaceSpec) -> Result<FilterResult> {
    if !spec.params.is_linear() {
        return Err(Error::InvalidParams(
            "the Kalman filter needs the linear model (kappa3 = 0); use the unscented filter".into(),
        ));
    }
    let kappa = spec.params.kappa;
    forward(spec, |a, p, price| Projection {
        z_mean: kappa * (a - price),
        z_var: kappa * kappa * p,
        cross: kappa * p,
    })
}

/// Unscented Kalman filter through `h(v) = κ(v − p̃) + κ₃(v − p̃)³`.
pub fn ukf_filter(spec: &StateSpaceSpec) -> Result<FilterResult> {
    let params = spec.params;
    forward(spec, |a, p, price| {
        let spread = (UT_SPREAD * p).sqrt();
        let h = |v: f64| {
            let gap = v - price;
            params.kappa * gap + params.kappa3 * gap * gap * gap
        };
        let (h0, hp, hm) = (h(a), h(a + spread), h(a - spread));
        let z_mean = UT_W0 * h0 + UT_W1 * (hp + hm);
        let z_var = UT_W0 * (h0 - z_mean).powi(2) + UT_W1 * ((hp - z_mean).powi(2) + (hm - z_mean).powi(2));
        let cross = UT_W1 * spread * (hp - hm);
        Projection { z_mean, z_var, cross }
    })
}

/// Rauch–Tung–Striebel backward pass for the random-walk value. Also used
/// after the unscented filter: with linear dynamics the unscented smoother
/// gain reduces to the same expression.
fn rts(spec: &StateSpaceSpec, mut res: FilterResult) -> Result<FilterResult> {
    let sv2 = spec.params.sigma_v * spec.params.sigma_v;
    let m = res.v_upd.len();
    let n = res.v_filt.len();
    let mut mean = vec![0.0; n];
    let mut var = vec![0.0; n];
    let mut lag = vec![0.0; m.saturating_sub(1)];
    // The last price carries no observation of its own value.
    mean[n - 1] = res.v_filt[n - 1];
    var[n - 1] = res.var_filt[n - 1];
    mean[m - 1] = res.v_upd[m - 1];
    var[m - 1] = res.var_upd[m - 1];
    for t in (0..m - 1).rev() {
        let p_upd = res.var_upd[t];
        let p_pred = p_upd + sv2;
        let gain = p_upd / p_pred;
        mean[t] = res.v_upd[t] + gain * (mean[t + 1] - res.v_upd[t]);
        var[t] = p_upd + gain * gain * (var[t + 1] - p_pred);
        lag[t] = gain * var[t + 1];
        if !(var[t] > 0.0) {
            return Err(Error::CovarianceNotPositive {
                step: t,
                variance: var[t],
            });
        }
    }
    res.v_smooth = mean;
    res.var_smooth = var;
    res.lag_cov = lag;
    Ok(res)
}

/// Kalman filter followed by the fixed-interval smoother.
pub fn kalman_smooth(spec: &StateSpaceSpec) -> Result<FilterResult> {
    let res = kalman_filter(spec)?;
    rts(spec, res)
}

/// Smooths an existing filter pass.
pub fn smooth(spec: &StateSpaceSpec, filtered: FilterResult) -> Result<FilterResult> {
    rts(spec, filtered)
}

/// Unscented filter followed by the backward pass.
pub fn ukf_smooth(spec: &StateSpaceSpec) -> Result<FilterResult> {
    let res = ukf_filter(spec)?;
    rts(spec, res)
}

/// Kalman filter for the linear model, unscented filter otherwise.
pub fn filter_auto(spec: &StateSpaceSpec) -> Result<FilterResult> {
    if spec.params.is_linear() {
        kalman_filter(spec)
    } else {
        ukf_filter(spec)
    }
}

/// Filter and smoother matching the model type.
pub fn smooth_auto(spec: &StateSpaceSpec) -> Result<FilterResult> {
    let res = filter_auto(spec)?;
    rts(spec, res)
}
