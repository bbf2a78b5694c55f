//! Modified Chiarella heterogeneous-agent market model.
//!
//! Three agent types drive the log-price `p` around a latent log-value `v`:
//! fundamentalists (demand `κ(v−p) + κ₃(v−p)³`), trend followers (demand
//! `β tanh(γ m)` on a drift-adjusted EWMA trend `m`) and noise traders. A
//! long-term drift `g_t` moves price and value alike, so the mispricing
//! `δ = p − v` and the trend are drift independent.
//!
//! The crate covers
//! - closed-form phase and Hopf analysis ([`model`]),
//! - deterministic, stochastic and monthly simulation ([`simulator`]),
//! - data cleaning and polynomial de-drifting ([`data`], [`drift`]),
//! - ex-ante trend parameter estimation ([`trend`]),
//! - Kalman and unscented filtering of the value ([`filtering`]),
//! - EM and three-step class calibration ([`calibration`]),
//! - bimodality, Jensen–Shannon, sloppiness and backtest analysis ([`analysis`]).

pub mod analysis;
pub mod calibration;
pub mod data;
pub mod drift;
pub mod error;
pub mod filtering;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod trend;

pub use calibration::{CalibrationReport, ClassCalibration, ModelKind};
pub use data::{CleanSeries, RawSeries};
pub use drift::DriftModel;
pub use error::{Error, Result};
pub use filtering::{FilterResult, StateSpaceSpec};
pub use model::{ChiarellaParams, Regime, RegimeClassification, SystemState};
pub use simulator::Trajectory;
pub use trend::TrendFit;
