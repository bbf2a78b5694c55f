//! Ex-ante estimation of the trend decay `α` and the saturation `γ`.

use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Default decay grid `{1/2, 1/3, …, 1/24}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (2..=24).map(|n| 1.0 / n as f64).collect()
}

/// Starting values of `γ̃` for the multi-start tanh fit. The first entry is
/// close to the linear limit.
const TANH_STARTS: [f64; 4] = [0.01, 0.1, 0.3, 1.0];
const ROLLING_WINDOW: usize = 1000;
/// Bound on `|γ̃|`. On unit-variance data a larger slope is a step function.
const GAMMA_TILDE_MAX: f64 = 20.0;
/// `γ̃` used to represent the straight-line limit of the tanh family.
const LINEAR_LIMIT_SLOPE: f64 = 1e-5;
const MAX_LM_ITER: usize = 500;
/// Relative residual decrease over `PLATEAU_WINDOW` iterations treated as
/// stalled.
const PLATEAU_WINDOW: usize = 20;
const PLATEAU_TOL: f64 = 1e-7;

/// EWMA of returns: `m_0 = 0`, `m_{t+1} = (1 − α) m_t + α r_t`.
pub fn ewma_trend(returns: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let mut m = Vec::with_capacity(returns.len());
    let mut cur = 0.0;
    for &r in returns {
        m.push(cur);
        cur = (1.0 - alpha) * cur + alpha * r;
    }
    Ok(m)
}

/// Trend signal of the monthly model for a de-drifted price path:
/// `m̃_0 = 0` and `m̃_{t+1} = (1 − α) m̃_t + α (p̃_t − p̃_{t−1})` with
/// `p̃_{−1} = p̃_0`, so `m̃_t` uses prices up to `t − 1`.
pub fn trend_from_prices(prices: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(prices.len());
    if !prices.is_empty() {
        returns.push(0.0);
        returns.extend(prices.windows(2).map(|w| w[1] - w[0]));
    }
    ewma_trend(&returns, alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Mean over population standard deviation, not annualised.
pub fn sharpe_ratio(excess_returns: &[f64]) -> Result<f64> {
    if excess_returns.len() < 2 {
        return Err(Error::InvalidInput("Sharpe ratio needs at least two returns".into()));
    }
    let mean = stats::mean(excess_returns);
    let sd = stats::std(excess_returns);
    if !(sd > 1e-14 * mean.abs()) || sd == 0.0 {
        return Err(Error::Numerical("Sharpe ratio undefined for zero variance".into()));
    }
    Ok(mean / sd)
}

/// One point of the Sharpe curve over the decay grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpePoint {
    pub alpha: f64,
    pub sharpe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub sharpe_curve: Vec<SharpePoint>,
}

/// Returns of the unit-size `sign(m)` strategy on one de-drifted series.
/// The position held over `p̃_{t+1} − p̃_t` uses prices up to `t`.
fn sign_strategy_returns(prices: &[f64], alpha: f64) -> Result<Vec<f64>> {
    let returns = stats::diff(prices);
    let m = ewma_trend(&returns, alpha)?;
    Ok(m.iter()
        .zip(&returns)
        .map(|(m, r)| if *m > 0.0 { *r } else if *m < 0.0 { -*r } else { 0.0 })
        .collect())
}

/// Decay maximising the pooled Sharpe ratio of the `sign(m̃)` strategy over
/// all series. Series are pooled in order of their id; ties go to the
/// smaller decay.
pub fn estimate_alpha(series_set: &[(&str, &[f64])], grid: &[f64]) -> Result<AlphaEstimate> {
    if series_set.is_empty() {
        return Err(Error::InvalidInput("alpha estimation needs at least one series".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("alpha grid is empty".into()));
    }
    let mut ordered: Vec<&(&str, &[f64])> = series_set.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    let mut grid: Vec<f64> = grid.to_vec();
    for &a in &grid {
        check_alpha(a)?;
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut curve = Vec::with_capacity(grid.len());
    for &alpha in &grid {
        let mut pooled = Vec::new();
        for (_, prices) in &ordered {
            pooled.extend(sign_strategy_returns(prices, alpha)?);
        }
        curve.push(SharpePoint {
            alpha,
            sharpe: sharpe_ratio(&pooled)?,
        });
    }
    let mut best = curve[0];
    for pt in &curve[1..] {
        if pt.sharpe > best.sharpe + 1e-12 * best.sharpe.abs() {
            best = *pt;
        }
    }
    // Report the curve in the order of the default grid (descending α).
    curve.reverse();
    Ok(AlphaEstimate {
        alpha: best.alpha,
        sharpe_curve: curve,
    })
}

/// Least-squares fit of `h(x) = a + b tanh(γ̃ x + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TanhFit {
    pub a: f64,
    pub b: f64,
    pub gamma_tilde: f64,
    pub c: f64,
    /// Standard errors of `(a, b, γ̃, c)`.
    pub std_errors: [f64; 4],
    pub residual_ss: f64,
    /// Residual sum of squares of the straight-line fit on the same data.
    pub linear_residual_ss: f64,
    pub n: usize,
    /// `(m_norm, ret_norm_rollavg)` after sorting by abscissa.
    #[serde(skip)]
    pub rolling: Vec<(f64, f64)>,
}

impl TanhFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * (self.gamma_tilde * x + self.c).tanh()
    }

    /// Writes the rolling-average diagnostic as `m_norm,ret_norm_rollavg`.
    pub fn write_rolling_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["m_norm", "ret_norm_rollavg"])?;
        for (x, y) in &self.rolling {
            w.write_record(&[x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn sse(x: &[f64], y: &[f64], th: &Vector4<f64>) -> f64 {
    x.iter()
        .zip(y)
        .map(|(x, y)| {
            let r = y - (th[0] + th[1] * (th[2] * x + th[3]).tanh());
            r * r
        })
        .sum()
}

/// Normal matrix `JᵀJ` and gradient `Jᵀr`.
fn normal_equations(x: &[f64], y: &[f64], th: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (x, y) in x.iter().zip(y) {
        let u = th[2] * x + th[3];
        let t = u.tanh();
        let s2 = 1.0 - t * t;
        let j = Vector4::new(1.0, t, th[1] * s2 * x, th[1] * s2);
        let r = y - (th[0] + th[1] * t);
        jtj += j * j.transpose();
        jtr += j * r;
    }
    (jtj, jtr)
}

struct LmOutcome {
    theta: Vector4<f64>,
    sse: f64,
    converged: bool,
}

fn levenberg_marquardt(x: &[f64], y: &[f64], start: Vector4<f64>) -> LmOutcome {
    let mut th = start;
    let mut cur = sse(x, y, &th);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut history = vec![cur];
    for _ in 0..MAX_LM_ITER {
        let (jtj, jtr) = normal_equations(x, y, &th);
        if jtr.amax() < 1e-12 * (1.0 + cur) {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = th + step;
            trial[2] = trial[2].clamp(-GAMMA_TILDE_MAX, GAMMA_TILDE_MAX);
            let val = sse(x, y, &trial);
            if val.is_finite() && val <= cur {
                let rel = (cur - val) / cur.max(f64::MIN_POSITIVE);
                let moved = (trial - th).amax();
                th = trial;
                cur = val;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < 1e-9 || moved < 1e-10 * (1.0 + th.amax()) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No downhill step at any damping: a stationary point to
            // machine precision.
            converged = true;
        }
        history.push(cur);
        if let Some(old) = history.len().checked_sub(PLATEAU_WINDOW + 1).map(|i| history[i]) {
            if (old - cur) < PLATEAU_TOL * cur {
                converged = true;
            }
        }
        if converged {
            break;
        }
    }
    LmOutcome {
        theta: th,
        sse: cur,
        converged,
    }
}

/// Ordinary least squares of `y` on `(1, z)`.
fn line_fit(z: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mz = stats::mean(z);
    let my = stats::mean(y);
    let szz: f64 = z.iter().map(|z| (z - mz) * (z - mz)).sum();
    let szy: f64 = z.iter().zip(y).map(|(z, y)| (z - mz) * (y - my)).sum();
    let slope = if szz > 0.0 { szy / szz } else { 0.0 };
    let intercept = my - slope * mz;
    let res: f64 = z
        .iter()
        .zip(y)
        .map(|(z, y)| {
            let r = y - intercept - slope * z;
            r * r
        })
        .sum();
    (intercept, slope, res)
}

fn rolling_average(x: &[f64], y: &[f64], window: usize) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let w = window.min(pairs.len()).max(1);
    let mut out = Vec::with_capacity(pairs.len() + 1 - w);
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, (px, py)) in pairs.iter().enumerate() {
        sx += px;
        sy += py;
        if i >= w {
            sx -= pairs[i - w].0;
            sy -= pairs[i - w].1;
        }
        if i + 1 >= w {
            out.push((sx / w as f64, sy / w as f64));
        }
    }
    out
}

/// Multi-start Levenberg–Marquardt fit of `a + b tanh(γ̃ x + c)` to
/// normalised trend `x` and normalised forward returns `y`.
pub fn fit_tanh(trend_norm: &[f64], fwd_returns_norm: &[f64]) -> Result<TanhFit> {
    let n = trend_norm.len();
    if n != fwd_returns_norm.len() {
        return Err(Error::InvalidInput("trend and return lengths differ".into()));
    }
    if n < 100 {
        return Err(Error::InvalidInput(format!("tanh fit needs at least 100 points, got {n}")));
    }
    if trend_norm.iter().chain(fwd_returns_norm).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("tanh fit inputs must be finite".into()));
    }
    let (_, _, linear_ss) = line_fit(trend_norm, fwd_returns_norm);

    let mut best: Option<LmOutcome> = None;
    for &g0 in &TANH_STARTS {
        let z: Vec<f64> = trend_norm.iter().map(|x| (g0 * x).tanh()).collect();
        let (a0, b0, _) = line_fit(&z, fwd_returns_norm);
        let out = levenberg_marquardt(trend_norm, fwd_returns_norm, Vector4::new(a0, b0, g0, 0.0));
        if best.as_ref().is_none_or(|b| out.sse < b.sse || (!b.converged && out.converged && out.sse <= b.sse * (1.0 + 1e-12))) {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one start");
    if best.sse > linear_ss {
        // The residual decreases towards the straight line as γ̃ → 0 with
        // b γ̃ fixed; take a point far enough along that ray.
        let (a0, slope, _) = line_fit(trend_norm, fwd_returns_norm);
        let eps = LINEAR_LIMIT_SLOPE;
        let th = Vector4::new(a0, slope / eps, eps, 0.0);
        let val = sse(trend_norm, fwd_returns_norm, &th);
        if val < best.sse {
            best = LmOutcome {
                theta: th,
                sse: val,
                converged: true,
            };
        }
    }
    if !best.converged {
        return Err(Error::Numerical(format!(
            "tanh fit did not converge from any start (best residual {:.6e})",
            best.sse
        )));
    }
    let mut th = best.theta;
    // b tanh(γ̃x + c) = (−b) tanh(−γ̃x − c): report γ̃ ≥ 0.
    if th[2] < 0.0 {
        th[1] = -th[1];
        th[2] = -th[2];
        th[3] = -th[3];
    }
    let (jtj, _) = normal_equations(trend_norm, fwd_returns_norm, &th);
    let s2 = best.sse / (n as f64 - 4.0);
    let std_errors = match jtj.try_inverse() {
        Some(inv) => [0, 1, 2, 3].map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()),
        None => [f64::INFINITY; 4],
    };
    Ok(TanhFit {
        a: th[0],
        b: th[1],
        gamma_tilde: th[2],
        c: th[3],
        std_errors,
        residual_ss: best.sse,
        linear_residual_ss: linear_ss,
        n,
        rolling: rolling_average(trend_norm, fwd_returns_norm, ROLLING_WINDOW),
    })
}

/// Ex-ante trend parameters for one asset class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub alpha: f64,
    pub sharpe_curve: Vec<SharpePoint>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub gamma_tilde: f64,
    pub gamma_tilde_err: f64,
    /// `γ = γ̃ / √Var[m̃]`.
    pub gamma: f64,
    pub gamma_err: f64,
    pub var_m: f64,
    pub residual_ss: f64,
    pub linear_residual_ss: f64,
}

impl TrendFit {
    pub fn from_parts(alpha: AlphaEstimate, tanh: &TanhFit, var_m: f64) -> Self {
        let sd = var_m.sqrt();
        Self {
            alpha: alpha.alpha,
            sharpe_curve: alpha.sharpe_curve,
            a: tanh.a,
            b: tanh.b,
            c: tanh.c,
            gamma_tilde: tanh.gamma_tilde,
            gamma_tilde_err: tanh.std_errors[2],
            gamma: tanh.gamma_tilde / sd,
            gamma_err: tanh.std_errors[2] / sd,
            var_m,
            residual_ss: tanh.residual_ss,
            linear_residual_ss: tanh.linear_residual_ss,
        }
    }
}

/// Pooled `(m̃_t, p̃_{t+1} − p̃_t)` pairs of a class at decay `alpha`, in id
/// order, each normalised to unit population variance. Also returns the
/// population variance of the raw trend.
pub fn normalized_trend_pairs(series_set: &[(&str, &[f64])], alpha: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut ordered: Vec<&(&str, &[f64])> = series_set.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (_, prices) in ordered {
        if prices.len() < 2 {
            continue;
        }
        let m = trend_from_prices(prices, alpha)?;
        for t in 0..prices.len() - 1 {
            xs.push(m[t]);
            ys.push(prices[t + 1] - prices[t]);
        }
    }
    let var_m = stats::variance(&xs);
    let sd_r = stats::std(&ys);
    if !(var_m > 0.0 && sd_r > 0.0) {
        return Err(Error::InvalidInput("trend or returns have zero variance".into()));
    }
    let sd_m = var_m.sqrt();
    xs.iter_mut().for_each(|x| *x /= sd_m);
    ys.iter_mut().for_each(|y| *y /= sd_r);
    Ok((xs, ys, var_m))
}

/// Estimates `α` on the grid, then fits the tanh response at that `α`.
pub fn estimate_trend(series_set: &[(&str, &[f64])], grid: &[f64]) -> Result<(TrendFit, TanhFit)> {
    let alpha = estimate_alpha(series_set, grid)?;
    let (x, y, var_m) = normalized_trend_pairs(series_set, alpha.alpha)?;
    let tanh = fit_tanh(&x, &y)?;
    Ok((TrendFit::from_parts(alpha, &tanh, var_m), tanh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn ewma_examples() {
        assert_eq!(ewma_trend(&[1.0, 0.0, 0.0], 0.5).unwrap(), vec![0.0, 0.5, 0.25]);
        let m = ewma_trend(&[3.0, -1.0, 2.0], 1.0).unwrap();
        assert_eq!(&m[1..], &[3.0, -1.0]);
        let m = ewma_trend(&vec![0.02; 400], 0.2).unwrap();
        assert!((m[399] - 0.02).abs() < 1e-15);
        assert!(ewma_trend(&[1.0], 0.0).is_err());
    }

    #[test]
    fn trend_from_prices_lags_one_month() {
        let p = [0.0, 1.0, 1.0, 1.0];
        assert_eq!(trend_from_prices(&p, 0.5).unwrap(), vec![0.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn sharpe_examples() {
        assert!((sharpe_ratio(&[0.01, -0.01, 0.03, 0.01]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(sharpe_ratio(&[1.0, -1.0, 1.0, -1.0]).unwrap(), 0.0);
        assert!(sharpe_ratio(&[0.01; 5]).is_err());
        assert!(sharpe_ratio(&[0.0; 5]).is_err());
        assert!(sharpe_ratio(&[0.01]).is_err());
    }

    #[test]
    fn sinusoid_prefers_fast_decay() {
        let p: Vec<f64> = (0..600)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin())
            .collect();
        let est = estimate_alpha(&[("sine", &p)], &default_alpha_grid()).unwrap();
        assert!(est.alpha >= 2.0 / 12.0 - 1e-12 && est.alpha <= 4.0 / 12.0 + 1e-12, "{}", est.alpha);
        assert_eq!(est.sharpe_curve.len(), 23);
        assert_eq!(est.sharpe_curve[0].alpha, 0.5);
    }

    #[test]
    fn white_noise_curve_is_flat() {
        let mut r = rng::aux_stream(5, 0);
        let mut p = vec![0.0];
        for _ in 0..20_000 {
            let last = *p.last().unwrap();
            p.push(last + 0.05 * rng::normal(&mut r));
        }
        let est = estimate_alpha(&[("wn", &p)], &default_alpha_grid()).unwrap();
        // Sampling std of a Sharpe ratio near zero is about 1/√n.
        let bound = 4.0 / (p.len() as f64).sqrt();
        assert!(est.sharpe_curve.iter().all(|s| s.sharpe.abs() < bound));
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(estimate_alpha(&[], &default_alpha_grid()).is_err());
    }

    fn synthetic_tanh(n: usize, seed: u64, th: [f64; 4], noise: f64) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::aux_stream(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
        let y = x
            .iter()
            .map(|x| th[0] + th[1] * (th[2] * x + th[3]).tanh() + noise * rng::normal(&mut r))
            .collect();
        (x, y)
    }

    #[test]
    fn tanh_parameters_are_recovered() {
        let truth = [0.0, 0.1, 0.3, 0.0];
        let (x, y) = synthetic_tanh(20_000, 3, truth, 0.01);
        let fit = fit_tanh(&x, &y).unwrap();
        let est = [fit.a, fit.b, fit.gamma_tilde, fit.c];
        for i in 0..4 {
            assert!(
                (est[i] - truth[i]).abs() < 3.0 * fit.std_errors[i],
                "param {i}: {} vs {} (se {})",
                est[i],
                truth[i],
                fit.std_errors[i]
            );
        }
    }

    #[test]
    fn antisymmetric_data_gives_centred_fit() {
        let x: Vec<f64> = (-200..=200).map(|i| i as f64 / 50.0).collect();
        let y: Vec<f64> = x.iter().map(|x| 0.5 * (0.8 * x).tanh() + 0.05 * x.powi(3).sin()).collect();
        let fit = fit_tanh(&x, &y).unwrap();
        assert!(fit.a.abs() < 1e-8 && fit.c.abs() < 1e-8, "{} {}", fit.a, fit.c);
    }

    #[test]
    fn gamma_rescaling() {
        let alpha = AlphaEstimate {
            alpha: 0.2,
            sharpe_curve: vec![],
        };
        let tanh = TanhFit {
            a: 0.0,
            b: 0.1,
            gamma_tilde: 0.3,
            c: 0.0,
            std_errors: [0.0, 0.0, 0.05, 0.0],
            residual_ss: 1.0,
            linear_residual_ss: 1.0,
            n: 100,
            rolling: vec![],
        };
        let fit = TrendFit::from_parts(alpha, &tanh, 0.04);
        assert!((fit.gamma - 1.5).abs() < 1e-12);
        assert!((fit.gamma_err - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rolling_curve_has_window_length() {
        let (x, y) = synthetic_tanh(1500, 1, [0.0, 0.1, 0.3, 0.0], 0.1);
        let fit = fit_tanh(&x, &y).unwrap();
        assert_eq!(fit.rolling.len(), 501);
        assert!(fit.rolling.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn gamma_tilde_is_scale_invariant() {
        let mut r = rng::aux_stream(9, 1);
        let mut p = vec![0.0];
        let mut m = 0.0f64;
        for _ in 0..3000 {
            let last = *p.last().unwrap();
            let next = last + 0.3 * (4.0 * m).tanh() * 0.05 + 0.05 * rng::normal(&mut r);
            m = 0.8 * m + 0.2 * (next - last);
            p.push(next);
        }
        let scaled: Vec<f64> = p.iter().map(|x| 3.0 * x).collect();
        let (f1, _) = estimate_trend(&[("a", &p)], &[0.2]).unwrap();
        let (f2, _) = estimate_trend(&[("a", &scaled)], &[0.2]).unwrap();
        assert!((f1.gamma_tilde - f2.gamma_tilde).abs() < 1e-8 * (1.0 + f1.gamma_tilde));
        assert!((f2.var_m.sqrt() / f1.var_m.sqrt() - 3.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn alpha_is_order_invariant(seed in 0u64..1000) {
            let mut r = rng::aux_stream(seed, 2);
            let mk = |r: &mut rng::Rng| {
                let mut p = vec![0.0];
                for _ in 0..300 {
                    let l = *p.last().unwrap();
                    p.push(l + rng::normal(r));
                }
                p
            };
            let a = mk(&mut r);
            let b = mk(&mut r);
            let c = mk(&mut r);
            let grid = default_alpha_grid();
            let x = estimate_alpha(&[("a", &a), ("b", &b), ("c", &c)], &grid).unwrap();
            let y = estimate_alpha(&[("c", &c), ("a", &a), ("b", &b)], &grid).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn tanh_beats_linear(seed in 0u64..1000, g in 0.05..3.0f64, noise in 0.05..1.0f64) {
            let (x, y) = synthetic_tanh(400, seed, [0.02, 0.2, g, 0.1], noise);
            let fit = fit_tanh(&x, &y).unwrap();
            prop_assert!(fit.residual_ss <= fit.linear_residual_ss * (1.0 + 1e-9));
        }
    }
}
