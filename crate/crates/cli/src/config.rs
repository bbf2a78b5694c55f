//! Run configuration (TOML).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chiarella_core::analysis::{NumericalProtocol, SloppinessOptions, VarianceMatchOptions};
use chiarella_core::calibration::EmOptions;
use chiarella_core::data::ExclusionWindow;
use chiarella_core::trend::default_alpha_grid;
use chiarella_core::{ChiarellaParams, ModelKind};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub id: String,
    pub csv_path: PathBuf,
    pub class: String,
    #[serde(default)]
    pub exclusion_windows: Vec<ExclusionWindow>,
    #[serde(default)]
    pub cpi_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        let d = EmOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

impl EmConfig {
    pub fn options(&self) -> EmOptions {
        EmOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            init: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SilvermanConfig {
    pub n_boot: usize,
    pub significance: f64,
}

impl Default for SilvermanConfig {
    fn default() -> Self {
        Self {
            n_boot: chiarella_core::analysis::silverman::DEFAULT_BOOTSTRAPS,
            significance: chiarella_core::analysis::silverman::SIGNIFICANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SloppinessConfig {
    pub delta_rel: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for SloppinessConfig {
    fn default() -> Self {
        let d = SloppinessOptions::default();
        Self {
            delta_rel: d.delta_rel,
            horizon: d.horizon,
            seed: d.seed,
        }
    }
}

impl SloppinessConfig {
    pub fn options(&self) -> SloppinessOptions {
        SloppinessOptions {
            delta_rel: self.delta_rel,
            horizon: self.horizon,
            seed: self.seed,
            ..Default::default()
        }
    }
}

/// Continuous-time simulation behind the numerical mispricing distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericalConfig {
    pub horizon: f64,
    pub dt: f64,
    pub max_points: usize,
}

impl Default for NumericalConfig {
    fn default() -> Self {
        let d = NumericalProtocol::default();
        Self {
            horizon: d.horizon,
            dt: d.dt,
            max_points: d.max_points,
        }
    }
}

impl NumericalConfig {
    pub fn protocol(&self, seed: u64) -> NumericalProtocol {
        NumericalProtocol {
            horizon: self.horizon,
            dt: self.dt,
            max_points: self.max_points,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceMatchConfig {
    pub horizon: usize,
    pub tol: f64,
    pub max_loglik_drop: f64,
}

impl Default for VarianceMatchConfig {
    fn default() -> Self {
        let d = VarianceMatchOptions::default();
        Self {
            horizon: d.horizon,
            tol: d.tol,
            max_loglik_drop: d.max_loglik_drop,
        }
    }
}

impl VarianceMatchConfig {
    pub fn options(&self, seed: u64) -> VarianceMatchOptions {
        VarianceMatchOptions {
            seed,
            horizon: self.horizon,
            tol: self.tol,
            max_loglik_drop: self.max_loglik_drop,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub periods: Vec<Period>,
}

/// Model parameters as written in a config file; the cubic term, noise and
/// initial value default to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub kappa: f64,
    #[serde(default)]
    pub kappa3: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default, rename = "sigma_N")]
    pub sigma_n: f64,
    #[serde(default, rename = "sigma_V")]
    pub sigma_v: f64,
    #[serde(default)]
    pub v0: f64,
}

impl From<ParamsConfig> for ChiarellaParams {
    fn from(p: ParamsConfig) -> Self {
        ChiarellaParams {
            kappa: p.kappa,
            kappa3: p.kappa3,
            beta: p.beta,
            gamma: p.gamma,
            alpha: p.alpha,
            sigma_n: p.sigma_n,
            sigma_v: p.sigma_v,
            v0: p.v0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Noise-free fourth-order integration.
    Deterministic,
    /// Euler–Maruyama.
    Sde,
    /// Monthly map.
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub params: ParamsConfig,
    #[serde(default = "default_mode")]
    pub mode: SimMode,
    /// Months (steps for the discrete map).
    #[serde(default = "default_sim_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Continuous-time steps per recorded point.
    #[serde(default = "one")]
    pub record_every: usize,
    /// Initial `(p, v, m)`; defaults to `(v0, v0, 0)`.
    #[serde(default)]
    pub init: Option<[f64; 3]>,
    /// Fraction of the path ignored by the cycle metrics.
    #[serde(default = "default_transient")]
    pub transient_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePortraitConfig {
    pub params: ParamsConfig,
    #[serde(default = "default_m_range")]
    pub m_range: [f64; 2],
    /// Defaults to the span of both nullclines over `m_range`.
    #[serde(default)]
    pub delta_range: Option<[f64; 2]>,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

fn default_mode() -> SimMode {
    SimMode::Sde
}
fn default_sim_horizon() -> f64 {
    3000.0
}
fn default_dt() -> f64 {
    0.01
}
fn one() -> usize {
    1
}
fn default_transient() -> f64 {
    0.5
}
fn default_m_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn default_grid_n() -> usize {
    50
}
fn default_model() -> ModelKind {
    ModelKind::Linear
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub assets: Vec<AssetConfig>,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub drift_order_override: Option<usize>,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub silverman: SilvermanConfig,
    #[serde(default)]
    pub sloppiness: SloppinessConfig,
    #[serde(default)]
    pub numerical: NumericalConfig,
    #[serde(default)]
    pub variance_match: VarianceMatchConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub phase_portrait: Option<PhasePortraitConfig>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative asset, CPI and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for a in &mut cfg.assets {
            a.csv_path = base.join(&a.csv_path);
            if let Some(c) = &a.cpi_path {
                a.cpi_path = Some(base.join(c));
            }
        }
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let mut ids = BTreeSet::new();
        let mut prices = BTreeSet::new();
        for a in &self.assets {
            if a.id.is_empty() || a.class.is_empty() {
                return bad("asset id and class must be non-empty".into());
            }
            if !a.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
                return bad(format!("asset id '{}' must be a plain file name", a.id));
            }
            if !ids.insert(a.id.as_str()) {
                return bad(format!("duplicate asset id '{}'", a.id));
            }
            if !prices.insert(a.csv_path.as_path()) {
                return bad(format!("price file {} listed twice", a.csv_path.display()));
            }
            for w in &a.exclusion_windows {
                if w.end < w.start {
                    return bad(format!("{}: exclusion window ends before it starts", a.id));
                }
            }
        }
        for a in &self.assets {
            if let Some(c) = &a.cpi_path {
                if prices.contains(c.as_path()) {
                    return bad(format!("{} is used both as prices and as CPI", c.display()));
                }
            }
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("alpha_grid must be non-empty with values in (0, 1]".into());
        }
        if self.drift_order_override == Some(0) {
            return bad("drift_order_override must be positive".into());
        }
        if !(self.em.tol > 0.0 && self.em.tol.is_finite()) || self.em.max_iter == 0 {
            return bad("em.tol must be positive and em.max_iter at least 1".into());
        }
        let s = &self.silverman;
        if !(s.significance > 0.0 && s.significance < 1.0) {
            return bad(format!("silverman.significance must lie in (0, 1), got {}", s.significance));
        }
        if s.n_boot < chiarella_core::analysis::silverman::MIN_BOOTSTRAPS {
            return bad(format!(
                "silverman.n_boot must be at least {}",
                chiarella_core::analysis::silverman::MIN_BOOTSTRAPS
            ));
        }
        if !(self.sloppiness.delta_rel > 0.0 && self.sloppiness.delta_rel < 1.0) {
            return bad("sloppiness.delta_rel must lie in (0, 1)".into());
        }
        let n = &self.numerical;
        if !(n.dt > 0.0 && n.horizon > n.dt && n.horizon.is_finite()) || n.max_points == 0 {
            return bad("numerical needs 0 < dt < horizon and max_points > 0".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(sim) = &self.simulate {
            if !(sim.dt > 0.0 && sim.horizon > 0.0 && sim.horizon.is_finite()) || sim.record_every == 0 {
                return bad("simulate needs positive dt, horizon and record_every".into());
            }
        }
        if let Some(pp) = &self.phase_portrait {
            if pp.grid_n < 2 || pp.m_range[0] >= pp.m_range[1] {
                return bad("phase_portrait needs grid_n >= 2 and an increasing m_range".into());
            }
            if let Some(d) = pp.delta_range {
                if d[0] >= d[1] {
                    return bad("phase_portrait.delta_range must be increasing".into());
                }
            }
        }
        Ok(())
    }

    /// `--workers` beats the config value; one worker per core otherwise.
    pub fn worker_count(&self, flag: Option<usize>) -> usize {
        flag.or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}
