//! Trend and value signal backtest on real (re-drifted, un-logged) prices.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::CleanSeries;
use crate::error::{Error, Result};
use crate::filtering::FilterResult;
use crate::model::{fundamentalist_demand, trend_demand, ChiarellaParams};
use crate::trend::{sharpe_ratio, trend_from_prices};

/// Decay of the EWMA volatilities used for normalisation.
pub const BACKTEST_DECAY: f64 = 1.0 / 7.0;
/// Months at the start without a usable volatility estimate.
pub const WARMUP_MONTHS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSharpe {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub sr_trend: Option<f64>,
    pub sr_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    /// Date of each PnL entry (the month the price change is realised).
    pub dates: Vec<NaiveDate>,
    pub pnl_trend: Vec<f64>,
    pub pnl_value: Vec<f64>,
    pub sr_trend: f64,
    pub sr_value: f64,
    pub period: (NaiveDate, NaiveDate),
    pub periods: Vec<PeriodSharpe>,
}

/// `β tanh(γ m̃_t)`, known at the close of month `t`.
pub fn trend_signal(theta: &ChiarellaParams, dedrifted: &[f64]) -> Result<Vec<f64>> {
    Ok(trend_from_prices(dedrifted, theta.alpha)?
        .iter()
        .map(|&m| trend_demand(m, theta))
        .collect())
}

/// Fundamentalist demand on the filtered value gap, `κ(ṽ−p̃) + κ₃(ṽ−p̃)³`.
pub fn value_signal(theta: &ChiarellaParams, dedrifted: &[f64], v_filtered: &[f64]) -> Result<Vec<f64>> {
    if v_filtered.len() != dedrifted.len() {
        return Err(Error::InvalidInput(format!(
            "filtered value has {} entries for {} prices",
            v_filtered.len(),
            dedrifted.len()
        )));
    }
    Ok(dedrifted
        .iter()
        .zip(v_filtered)
        .map(|(p, v)| fundamentalist_demand(v - p, theta))
        .collect())
}

/// EWMA standard deviation (zero mean) of `x` including the value at each
/// index; `None` before the first value.
pub fn ewma_std(x: &[f64], decay: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut var: Option<f64> = None;
    for &v in x {
        let next = match var {
            None => v * v,
            Some(prev) => (1.0 - decay) * prev + decay * v * v,
        };
        var = Some(next);
        out.push(next.sqrt());
    }
    out
}

/// Divides each signal by the EWMA std of the signal up to the previous
/// month and clips to `[−1, 1]`. The first entry has no history and is 0.
pub fn normalize_clip(signal: &[f64], decay: f64) -> Vec<f64> {
    let sd = ewma_std(signal, decay);
    signal
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            if t == 0 || sd[t - 1] == 0.0 {
                0.0
            } else {
                (s / sd[t - 1]).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// `PnL_t = s_{t−1} (P_t − P_{t−1}) / σ^P_{t−1}` for `t > WARMUP_MONTHS`,
/// with `σ^P` the EWMA std of price changes.
pub fn signal_pnl(signal: &[f64], prices: &[f64]) -> Result<Vec<f64>> {
    if signal.len() != prices.len() {
        return Err(Error::InvalidInput("signal and price lengths differ".into()));
    }
    if prices.len() <= WARMUP_MONTHS + 1 {
        return Err(Error::InvalidInput(format!(
            "backtest needs more than {} months, got {}",
            WARMUP_MONTHS + 1,
            prices.len()
        )));
    }
    // dp[i] is the change from month i to i + 1.
    let dp: Vec<f64> = prices.windows(2).map(|w| w[1] - w[0]).collect();
    let sd = ewma_std(&dp, BACKTEST_DECAY);
    Ok(((WARMUP_MONTHS + 1)..prices.len())
        .map(|t| {
            let vol = sd[t - 2];
            if vol > 0.0 {
                signal[t - 1] * dp[t - 1] / vol
            } else {
                0.0
            }
        })
        .collect())
}

/// Runs both signals. `filter` must come from a causal pass over the same
/// series; its one-step predictions `v_filt` are used, never the smoothed
/// value. `periods` adds Sharpe ratios over date windows.
pub fn backtest_signals(
    theta: &ChiarellaParams,
    series: &CleanSeries,
    filter: &FilterResult,
    periods: &[(NaiveDate, NaiveDate)],
) -> Result<BacktestResult> {
    let prices: Vec<f64> = series.logp.iter().map(|x| x.exp()).collect();
    let trend = normalize_clip(&trend_signal(theta, &series.dedrifted)?, BACKTEST_DECAY);
    let value = value_signal(theta, &series.dedrifted, &filter.v_filt)?;
    let pnl_trend = signal_pnl(&trend, &prices)?;
    let pnl_value = signal_pnl(&value, &prices)?;
    let dates = series.dates[WARMUP_MONTHS + 1..].to_vec();
    let windows = periods
        .iter()
        .map(|&(start, end)| {
            let pick = |pnl: &[f64]| -> Vec<f64> {
                dates
                    .iter()
                    .zip(pnl)
                    .filter(|(d, _)| **d >= start && **d <= end)
                    .map(|(_, p)| *p)
                    .collect()
            };
            PeriodSharpe {
                start,
                end,
                sr_trend: sharpe_ratio(&pick(&pnl_trend)).ok(),
                sr_value: sharpe_ratio(&pick(&pnl_value)).ok(),
            }
        })
        .collect();
    Ok(BacktestResult {
        sr_trend: sharpe_ratio(&pnl_trend)?,
        sr_value: sharpe_ratio(&pnl_value)?,
        period: (dates[0], *dates.last().expect("non-empty")),
        dates,
        pnl_trend,
        pnl_value,
        periods: windows,
    })
}
