//! Deterministic, stochastic and monthly simulation of the model.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::model::{fundamentalist_demand, trend_demand, ChiarellaParams, SystemState};
use crate::rng;

/// Time-indexed `(p, v, m)` path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    pub params: ChiarellaParams,
    pub seed: Option<u64>,
    /// Spacing between recorded points (months).
    pub dt: f64,
}

impl Trajectory {
    fn with_capacity(params: ChiarellaParams, seed: Option<u64>, dt: f64, n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            params,
            seed,
            dt,
        }
    }

    fn push(&mut self, t: f64, s: &State) {
        self.times.push(t);
        self.p.push(s.p);
        self.v.push(s.v);
        self.m.push(s.m);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mispricing `δ = p − v`.
    pub fn delta(&self) -> Vec<f64> {
        self.p.iter().zip(&self.v).map(|(p, v)| p - v).collect()
    }

    pub fn final_state(&self) -> Option<SystemState> {
        let i = self.len().checked_sub(1)?;
        Some(SystemState::new(self.p[i], self.v[i], self.m[i]).at(self.times[i]))
    }

    /// Writes columns `t,p,v,m,delta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "p", "v", "m", "delta"])?;
        for i in 0..self.len() {
            w.write_record(&[
                self.times[i].to_string(),
                self.p[i].to_string(),
                self.v[i].to_string(),
                self.m[i].to_string(),
                (self.p[i] - self.v[i]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    p: f64,
    v: f64,
    m: f64,
}

impl State {
    fn from_system(s: &SystemState) -> Self {
        Self {
            p: s.p,
            v: s.v,
            m: s.m,
        }
    }

    fn check(&self, step: usize) -> Result<()> {
        if self.p.is_finite() && self.v.is_finite() && self.m.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite {
                step,
                detail: format!("p = {}, v = {}, m = {}", self.p, self.v, self.m),
            })
        }
    }
}

fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = (horizon / dt).round();
    if n < 1.0 {
        return Err(Error::InvalidInput("horizon shorter than one step".into()));
    }
    Ok(n as usize)
}

/// Deterministic price velocity excluding the drift term.
#[inline]
fn price_force(s: &State, params: &ChiarellaParams) -> f64 {
    fundamentalist_demand(s.v - s.p, params) + trend_demand(s.m, params)
}

/// Continuous-time vector field with noise switched off.
#[inline]
fn vector_field(s: &State, g: f64, params: &ChiarellaParams) -> State {
    let force = price_force(s, params);
    State {
        p: force + g,
        v: g,
        m: -params.alpha * s.m + params.alpha * force,
    }
}

/// One Euler(–Maruyama) step. `drift_inc` is the drift over the step and
/// `shock_n`, `shock_v` are the noise increments (already scaled).
#[inline]
fn euler_step(s: &State, params: &ChiarellaParams, dt: f64, drift_inc: f64, shock_n: f64, shock_v: f64) -> State {
    let dp = price_force(s, params) * dt + drift_inc + shock_n;
    let dm = -params.alpha * s.m * dt + params.alpha * (dp - drift_inc);
    State {
        p: s.p + dp,
        v: s.v + drift_inc + shock_v,
        m: s.m + dm,
    }
}

fn rk4_step(s: &State, t: f64, dt: f64, params: &ChiarellaParams, drift: &DriftModel) -> Result<State> {
    let add = |a: &State, k: &State, h: f64| State {
        p: a.p + h * k.p,
        v: a.v + h * k.v,
        m: a.m + h * k.m,
    };
    let g1 = drift.rate(t)?;
    let g2 = drift.rate(t + 0.5 * dt)?;
    let g4 = drift.rate(t + dt)?;
    let k1 = vector_field(s, g1, params);
    let k2 = vector_field(&add(s, &k1, 0.5 * dt), g2, params);
    let k3 = vector_field(&add(s, &k2, 0.5 * dt), g2, params);
    let k4 = vector_field(&add(s, &k3, dt), g4, params);
    Ok(State {
        p: s.p + dt / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
        v: s.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        m: s.m + dt / 6.0 * (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m),
    })
}

/// Drift increment `G(t + dt) − G(t)` over one step.
#[inline]
fn drift_increment(drift: &DriftModel, t: f64, dt: f64) -> Result<f64> {
    if drift.is_zero() {
        return Ok(0.0);
    }
    Ok(drift.value(t + dt)? - drift.value(t)?)
}

/// Classical fourth-order Runge–Kutta integration with the noise switched
/// off. The volatilities in `params` are ignored.
pub fn integrate_deterministic(
    params: &ChiarellaParams,
    init: SystemState,
    dt: f64,
    horizon: f64,
    drift: &DriftModel,
) -> Result<Trajectory> {
    params.validate()?;
    let n = step_count(dt, horizon)?;
    let mut traj = Trajectory::with_capacity(*params, None, dt, n + 1);
    let mut s = State::from_system(&init);
    s.check(0)?;
    traj.push(init.t, &s);
    for i in 0..n {
        let t = init.t + i as f64 * dt;
        s = rk4_step(&s, t, dt, params, drift)?;
        s.check(i + 1)?;
        traj.push(init.t + (i + 1) as f64 * dt, &s);
    }
    Ok(traj)
}

/// Explicit Euler integration with the noise switched off; the zero-noise
/// limit of [`simulate_sde`].
pub fn integrate_euler(
    params: &ChiarellaParams,
    init: SystemState,
    dt: f64,
    horizon: f64,
    drift: &DriftModel,
) -> Result<Trajectory> {
    params.validate()?;
    let n = step_count(dt, horizon)?;
    let mut traj = Trajectory::with_capacity(*params, None, dt, n + 1);
    let mut s = State::from_system(&init);
    s.check(0)?;
    traj.push(init.t, &s);
    for i in 0..n {
        let t = init.t + i as f64 * dt;
        s = euler_step(&s, params, dt, drift_increment(drift, t, dt)?, 0.0, 0.0);
        s.check(i + 1)?;
        traj.push(init.t + (i + 1) as f64 * dt, &s);
    }
    Ok(traj)
}

/// Euler–Maruyama simulation recording every step.
pub fn simulate_sde(
    params: &ChiarellaParams,
    init: SystemState,
    dt: f64,
    horizon: f64,
    seed: u64,
    drift: &DriftModel,
) -> Result<Trajectory> {
    simulate_sde_strided(params, init, dt, horizon, seed, drift, 1)
}

/// Euler–Maruyama simulation recording every `stride`-th step.
///
/// The integration itself always advances by `dt`; only the stored
/// trajectory is thinned, so the path is the same as with `stride = 1`.
pub fn simulate_sde_strided(
    params: &ChiarellaParams,
    init: SystemState,
    dt: f64,
    horizon: f64,
    seed: u64,
    drift: &DriftModel,
    stride: usize,
) -> Result<Trajectory> {
    params.validate()?;
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be at least 1".into()));
    }
    let n = step_count(dt, horizon)?;
    let mut noise_n = rng::noise_stream(seed);
    let mut noise_v = rng::value_stream(seed);
    let scale_n = params.sigma_n * dt.sqrt();
    let scale_v = params.sigma_v * dt.sqrt();

    let mut traj = Trajectory::with_capacity(*params, Some(seed), dt * stride as f64, n / stride + 1);
    let mut s = State::from_system(&init);
    s.check(0)?;
    traj.push(init.t, &s);
    for i in 0..n {
        let t = init.t + i as f64 * dt;
        let xi_n = rng::normal(&mut noise_n);
        let xi_v = rng::normal(&mut noise_v);
        s = euler_step(
            &s,
            params,
            dt,
            drift_increment(drift, t, dt)?,
            scale_n * xi_n,
            scale_v * xi_v,
        );
        if (i + 1) % stride == 0 {
            s.check(i + 1)?;
            traj.push(init.t + (i + 1) as f64 * dt, &s);
        }
    }
    s.check(n)?;
    Ok(traj)
}

/// Exact iteration of the de-drifted monthly system
///
/// ```text
/// p_{t+1} = p_t + f(v_t − p_t) + β tanh(γ m_t) + η^N_t
/// m_{t+1} = (1 − α) m_t + α (p_t − p_{t−1}),   p_{−1} = p_0
/// v_{t+1} = v_t + η^V_t
/// ```
///
/// producing `horizon` monthly points. Without an explicit `init` the run
/// starts at `p_0 = v_0 = params.v0`, `m_0 = 0`.
pub fn simulate_discrete(
    params: &ChiarellaParams,
    horizon: usize,
    seed: u64,
    init: Option<SystemState>,
) -> Result<Trajectory> {
    params.validate()?;
    if horizon < 2 {
        return Err(Error::InvalidInput(format!(
            "discrete horizon must be at least 2, got {horizon}"
        )));
    }
    let init = init.unwrap_or(SystemState::new(params.v0, params.v0, 0.0));
    let mut noise_n = rng::noise_stream(seed);
    let mut noise_v = rng::value_stream(seed);
    let mut traj = Trajectory::with_capacity(*params, Some(seed), 1.0, horizon);

    let mut s = State::from_system(&init);
    s.check(0)?;
    let mut p_prev = s.p;
    traj.push(init.t, &s);
    for i in 1..horizon {
        let eta_n = params.sigma_n * rng::normal(&mut noise_n);
        let eta_v = params.sigma_v * rng::normal(&mut noise_v);
        let next = State {
            p: s.p + price_force(&s, params) + eta_n,
            v: s.v + eta_v,
            m: (1.0 - params.alpha) * s.m + params.alpha * (s.p - p_prev),
        };
        p_prev = s.p;
        s = next;
        s.check(i)?;
        traj.push(init.t + i as f64, &s);
    }
    Ok(traj)
}

/// Amplitude and period of a sustained oscillation of `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    /// Half the peak-to-peak range of `δ`.
    pub amplitude: f64,
    /// Mean spacing of upward mid-level crossings (months).
    pub period: f64,
}

/// Oscillation metrics after discarding the leading `transient_fraction` of
/// the trajectory. Returns `None` when `δ` has settled (amplitude below
/// `1e-6`) or fewer than two upward crossings remain.
pub fn limit_cycle_metrics(traj: &Trajectory, transient_fraction: f64) -> Result<Option<CycleMetrics>> {
    let delta = traj.delta();
    cycle_metrics_of(&traj.times, &delta, transient_fraction)
}

/// [`limit_cycle_metrics`] on a bare `(t, δ)` series.
pub fn cycle_metrics_of(times: &[f64], delta: &[f64], transient_fraction: f64) -> Result<Option<CycleMetrics>> {
    if !(0.0..1.0).contains(&transient_fraction) {
        return Err(Error::InvalidInput(format!(
            "transient fraction must lie in [0, 1), got {transient_fraction}"
        )));
    }
    if times.len() != delta.len() {
        return Err(Error::InvalidInput("times and delta differ in length".into()));
    }
    let start = (transient_fraction * delta.len() as f64).floor() as usize;
    if delta.len().saturating_sub(start) < 3 {
        return Err(Error::InvalidInput(format!(
            "trajectory of {} points is too short for a transient of {start}",
            delta.len()
        )));
    }
    let t = &times[start..];
    let d = &delta[start..];
    let (lo, hi) = crate::stats::min_max(d);
    let amplitude = 0.5 * (hi - lo);
    if amplitude < 1e-6 {
        return Ok(None);
    }
    let mid = 0.5 * (hi + lo);
    let mut crossings = Vec::new();
    for i in 1..d.len() {
        let (a, b) = (d[i - 1] - mid, d[i] - mid);
        if a < 0.0 && b >= 0.0 {
            let frac = -a / (b - a);
            crossings.push(t[i - 1] + frac * (t[i] - t[i - 1]));
        }
    }
    if crossings.len() < 2 {
        return Ok(None);
    }
    let period = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    Ok(Some(CycleMetrics { amplitude, period }))
}
