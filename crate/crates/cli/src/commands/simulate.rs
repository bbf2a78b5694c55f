use std::path::{Path, PathBuf};

use chiarella_core::model::classify_regime;
use chiarella_core::simulator::{
    integrate_deterministic, limit_cycle_metrics, simulate_discrete, simulate_sde_strided, CycleMetrics,
};
use chiarella_core::{ChiarellaParams, DriftModel, RegimeClassification, SystemState};
use serde::Serialize;

use crate::config::{RunConfig, SimMode, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    #[serde(flatten)]
    pub regime: RegimeClassification,
    pub params: ChiarellaParams,
    pub mode: SimMode,
    pub seed: Option<u64>,
    pub dt: f64,
    pub horizon: f64,
    pub points: usize,
    pub final_state: Option<SystemState>,
    /// Oscillation after the transient; absent when the path settles.
    pub cycle: Option<CycleMetrics>,
}

/// Writes `trajectory.csv` and `summary.json` under `<output>/simulate`.
pub fn run(cfg: &RunConfig, seed: Option<u64>, output: &Path) -> CliResult<PathBuf> {
    let sim: &SimulateConfig = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [simulate] section".into()))?;
    let params: ChiarellaParams = sim.params.into();
    params.validate()?;
    let regime = classify_regime(&params)?;
    let init = match sim.init {
        Some([p, v, m]) => SystemState::new(p, v, m),
        None => SystemState::new(params.v0, params.v0, 0.0),
    };
    let drift = DriftModel::zero(0.0, sim.horizon);
    let traj = match sim.mode {
        SimMode::Deterministic => integrate_deterministic(&params, init, sim.dt, sim.horizon, &drift)?,
        SimMode::Sde | SimMode::Discrete => {
            let seed = seed.ok_or_else(|| {
                CliError::Config("a stochastic simulation needs a seed (--seed or `seed` in the config)".into())
            })?;
            if sim.mode == SimMode::Sde {
                simulate_sde_strided(&params, init, sim.dt, sim.horizon, seed, &drift, sim.record_every)?
            } else {
                simulate_discrete(&params, sim.horizon.round() as usize, seed, Some(init))?
            }
        }
    };
    let cycle = limit_cycle_metrics(&traj, sim.transient_fraction)?;
    let dir = ensure_dir(&output.join("simulate"))?;
    traj.save_csv(&dir.join("trajectory.csv"))?;
    let summary = SimulationSummary {
        regime,
        params,
        mode: sim.mode,
        seed: traj.seed,
        dt: traj.dt,
        horizon: sim.horizon,
        points: traj.len(),
        final_state: traj.final_state(),
        cycle,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    log::info!(
        "stage=simulate regime={:?} points={} seed={:?}",
        summary.regime.regime,
        summary.points,
        summary.seed
    );
    Ok(dir)
}
