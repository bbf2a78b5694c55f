//! Long-term drift `G_t = ∫ g_s ds` represented as a Legendre series.
//!
//! Time is rescaled from `[t_start, t_end]` to `[−1, 1]` so that high orders
//! (20–30 over a few thousand months) stay well conditioned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when evaluating at the domain edges.
const DOMAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Legendre coefficients `c_n` of `G` on the rescaled axis.
    pub coefficients: Vec<f64>,
    pub order: usize,
    /// `(t_start, t_end)` in months.
    pub domain: (f64, f64),
}

impl DriftModel {
    /// `G ≡ 0` over the given domain.
    pub fn zero(t_start: f64, t_end: f64) -> Self {
        Self {
            coefficients: vec![0.0],
            order: 0,
            domain: (t_start, t_end),
        }
    }

    /// Constant drift rate `g`, with `G(t_start) = 0`.
    pub fn constant_rate(g: f64, t_start: f64, t_end: f64) -> Self {
        let half = 0.5 * g * (t_end - t_start);
        Self {
            coefficients: vec![half, half],
            order: 1,
            domain: (t_start, t_end),
        }
    }

    pub fn from_coefficients(coefficients: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidInput("drift needs at least one coefficient".into()));
        }
        if !(domain.1 > domain.0) || !domain.0.is_finite() || !domain.1.is_finite() {
            return Err(Error::InvalidInput(format!(
                "drift domain must be a finite increasing interval, got {domain:?}"
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("drift coefficients must be finite".into()));
        }
        Ok(Self {
            order: coefficients.len() - 1,
            coefficients,
            domain,
        })
    }

    /// Maps `t` to the rescaled axis, rejecting points outside the domain.
    pub fn rescale(&self, t: f64) -> Result<f64> {
        let (a, b) = self.domain;
        let span = b - a;
        let slack = DOMAIN_SLACK * span.abs().max(1.0);
        if !(t >= a - slack && t <= b + slack) {
            return Err(Error::InvalidInput(format!(
                "drift evaluated at t = {t} outside its domain [{a}, {b}]"
            )));
        }
        if span == 0.0 {
            return Ok(0.0);
        }
        Ok((2.0 * (t - a) / span - 1.0).clamp(-1.0, 1.0))
    }

    /// Integrated drift `G_t`.
    pub fn value(&self, t: f64) -> Result<f64> {
        let x = self.rescale(t)?;
        Ok(legendre_series(&self.coefficients, x).0)
    }

    /// Drift rate `g_t = dG/dt`.
    pub fn rate(&self, t: f64) -> Result<f64> {
        let x = self.rescale(t)?;
        let (a, b) = self.domain;
        if b == a {
            return Ok(0.0);
        }
        Ok(legendre_series(&self.coefficients, x).1 * 2.0 / (b - a))
    }

    /// `G` at integer times `t_start, t_start + 1, …` for `n` points.
    pub fn values_on_grid(&self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|i| self.value(self.domain.0 + i as f64)).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }
}

/// Evaluates `Σ c_n P_n(x)` and its derivative in `x`.
pub(crate) fn legendre_series(coefficients: &[f64], x: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut deriv = 0.0;
    // P_{n-1}, P_n and their derivatives.
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    for (n, &c) in coefficients.iter().enumerate() {
        value += c * p;
        deriv += c * d;
        let nf = n as f64;
        let p_next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        let d_next = d_prev + (2.0 * nf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (value, deriv)
}

/// Values `P_0(x) … P_order(x)`.
pub(crate) fn legendre_basis(order: usize, x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if order >= 1 {
        out[1] = x;
    }
    for n in 1..order {
        let nf = n as f64;
        out[n + 1] = ((2.0 * nf + 1.0) * x * out[n] - nf * out[n - 1]) / (nf + 1.0);
    }
}
