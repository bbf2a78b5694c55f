//! Mispricing distribution statistics, parameter sloppiness and the signal
//! backtest.

pub mod backtest;
pub mod bimodality;
pub mod js;
pub mod silverman;
pub mod sloppiness;
pub mod variance_match;

pub use backtest::{backtest_signals, BacktestResult};
pub use bimodality::{
    empirical_verdict, empirical_verdict_at, numerical_mispricing, numerical_verdict, numerical_verdict_at, BimodalityRow, MispricingSample, MispricingSource,
    NumericalProtocol, Verdict,
};
pub use js::{js_distance, JsDistance};
pub use silverman::{critical_bandwidth, silverman_test, SilvermanResult};
pub use sloppiness::{average_class_hessian, sloppiness_hessian, SloppinessOptions, SloppinessReport};
pub use variance_match::{variance_match, VarianceMatch, VarianceMatchOptions};
