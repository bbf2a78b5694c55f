//! Continuous-time model, demand functions and linear stability analysis.
//!
//! In the `(δ, M)` plane with `δ = p − v` the deterministic linear system is
//!
//! ```text
//! δ̇ = −κ δ + β tanh(γ M)
//! Ṁ = −α M + α δ̇
//! ```
//!
//! which has a single fixed point at the origin. Its Jacobian there has
//! `det = ακ` and `tr = α(βγ − 1) − κ`, so the fixed point loses stability
//! through a Hopf bifurcation at `α* = κ / (βγ − 1)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full parameter vector of the (linear or cubic) model.
///
/// Time is measured in months; prices and values are logarithmic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiarellaParams {
    /// Linear mean-reversion strength (1/month).
    pub kappa: f64,
    /// Cubic mean-reversion coefficient; zero selects the linear model.
    pub kappa3: f64,
    /// Trend-follower impact (log-price/month).
    pub beta: f64,
    /// Trend saturation sensitivity.
    pub gamma: f64,
    /// EWMA decay rate of the trend signal, in `(0, 1]`.
    pub alpha: f64,
    /// Noise-trader volatility (log-price/√month).
    #[serde(rename = "sigma_N")]
    pub sigma_n: f64,
    /// Fundamental value volatility (log-price/√month).
    #[serde(rename = "sigma_V")]
    pub sigma_v: f64,
    /// Initial log-value.
    pub v0: f64,
}

impl ChiarellaParams {
    /// Linear-model parameters with zero noise and `v0 = 0`.
    pub fn linear(kappa: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self {
            kappa,
            kappa3: 0.0,
            beta,
            gamma,
            alpha,
            sigma_n: 0.0,
            sigma_v: 0.0,
            v0: 0.0,
        }
    }

    pub fn with_noise(mut self, sigma_n: f64, sigma_v: f64) -> Self {
        self.sigma_n = sigma_n;
        self.sigma_v = sigma_v;
        self
    }

    pub fn with_kappa3(mut self, kappa3: f64) -> Self {
        self.kappa3 = kappa3;
        self
    }

    pub fn is_linear(&self) -> bool {
        self.kappa3 == 0.0
    }

    /// Checks the parameter invariants.
    ///
    /// `κ` may be negative; the linear-only phase analysis rejects that case
    /// separately.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("kappa", self.kappa),
            ("kappa3", self.kappa3),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("sigma_N", self.sigma_n),
            ("sigma_V", self.sigma_v),
            ("v0", self.v0),
        ];
        if let Some((name, value)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} is not finite ({value})")));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.kappa3 < 0.0 {
            return Err(Error::InvalidParams(format!(
                "kappa3 must be non-negative, got {}",
                self.kappa3
            )));
        }
        if self.sigma_n < 0.0 || self.sigma_v < 0.0 {
            return Err(Error::InvalidParams(
                "noise volatilities must be non-negative".into(),
            ));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    fn require_linear_stable_kappa(&self) -> Result<()> {
        if !self.is_linear() {
            return Err(Error::InvalidParams(
                "phase analysis is only available for the linear model (kappa3 = 0)".into(),
            ));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "phase analysis requires kappa > 0, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Instantaneous state of the continuous system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Log-price.
    pub p: f64,
    /// Log-value.
    pub v: f64,
    /// Trend signal.
    pub m: f64,
    /// Time in months.
    pub t: f64,
}

impl SystemState {
    pub fn new(p: f64, v: f64, m: f64) -> Self {
        Self { p, v, m, t: 0.0 }
    }

    pub fn at(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn delta(&self) -> f64 {
        self.p - self.v
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.v.is_finite() && self.m.is_finite() && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// The fixed point attracts; trajectories spiral (or, for small `βγ`,
    /// relax) into the origin.
    StableSpiral,
    /// The fixed point repels and a limit cycle surrounds it.
    LimitCycle,
}

/// Outcome of [`classify_regime`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeClassification {
    pub regime: Regime,
    pub trace: f64,
    pub det: f64,
    /// Critical trend decay `α* = κ/(βγ−1)`; absent when `βγ ≤ 1`.
    pub hopf_alpha: Option<f64>,
}

/// Fundamentalist demand rate `f(x) = κx + κ₃x³` for the value gap `x = v − p`.
pub fn fundamentalist_demand(gap: f64, params: &ChiarellaParams) -> f64 {
    params.kappa * gap + params.kappa3 * gap * gap * gap
}

/// Trend-follower demand rate `β tanh(γ m)`.
pub fn trend_demand(m: f64, params: &ChiarellaParams) -> f64 {
    params.beta * (params.gamma * m).tanh()
}

/// Deterministic velocity `(δ̇, Ṁ)` in the mispricing/trend plane.
pub fn mispricing_velocity(delta: f64, m: f64, params: &ChiarellaParams) -> (f64, f64) {
    let d_delta = fundamentalist_demand(-delta, params) + trend_demand(m, params);
    let d_m = -params.alpha * m + params.alpha * d_delta;
    (d_delta, d_m)
}

/// Jacobian of the `(δ, M)` system at the origin, rows `(δ̇, Ṁ)`.
pub fn jacobian_at_origin(params: &ChiarellaParams) -> Result<[[f64; 2]; 2]> {
    params.require_linear_stable_kappa()?;
    let bg = params.beta * params.gamma;
    Ok([
        [-params.kappa, bg],
        [-params.alpha * params.kappa, params.alpha * (bg - 1.0)],
    ])
}

/// Critical decay rate `α* = κ/(βγ − 1)`, defined only for `βγ > 1`.
pub fn hopf_point(params: &ChiarellaParams) -> Option<f64> {
    let excess = params.beta * params.gamma - 1.0;
    (excess > 0.0).then(|| params.kappa / excess)
}

pub fn classify_regime(params: &ChiarellaParams) -> Result<RegimeClassification> {
    params.require_linear_stable_kappa()?;
    if params.alpha <= 0.0 {
        return Err(Error::InvalidParams("alpha must be positive".into()));
    }
    let j = jacobian_at_origin(params)?;
    let trace = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let regime = if trace < 0.0 {
        Regime::StableSpiral
    } else {
        Regime::LimitCycle
    };
    Ok(RegimeClassification {
        regime,
        trace,
        det,
        hopf_alpha: hopf_point(params),
    })
}

/// Eigenvalues of the Jacobian at the origin from the closed-form quadratic
///
/// `λ = ½(αβγ − α − κ ± √((α + κ − αβγ)² − 4ακ))`.
///
/// The first entry carries the `+` branch (positive imaginary part for a
/// complex pair).
pub fn hopf_eigenvalues(params: &ChiarellaParams) -> [Complex64; 2] {
    let ChiarellaParams {
        kappa, alpha, beta, gamma, ..
    } = *params;
    let half_trace = 0.5 * (alpha * beta * gamma - alpha - kappa);
    let s = -alpha * beta * gamma + alpha + kappa;
    let disc = s * s - 4.0 * alpha * kappa;
    if disc < 0.0 {
        let im = 0.5 * (-disc).sqrt();
        [
            Complex64::new(half_trace, im),
            Complex64::new(half_trace, -im),
        ]
    } else {
        let root = 0.5 * disc.sqrt();
        [
            Complex64::new(half_trace + root, 0.0),
            Complex64::new(half_trace - root, 0.0),
        ]
    }
}

/// The two nullclines evaluated at trend `m`:
/// `δ = (β/κ) tanh(γm)` (δ-nullcline) and `δ = (β/κ) tanh(γm) − m/κ`
/// (M-nullcline). Requires `κ > 0`.
pub fn nullclines(params: &ChiarellaParams, m: f64) -> (f64, f64) {
    let on_delta = params.beta / params.kappa * (params.gamma * m).tanh();
    (on_delta, on_delta - m / params.kappa)
}
