use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chiarella_core::calibration::{em_fit, three_step_calibrate, write_table_csv, ClassOptions, EmFixed};
use chiarella_core::data::PrepOptions;
use chiarella_core::trend::estimate_trend;
use chiarella_core::{CalibrationReport, ClassCalibration, CleanSeries, ModelKind, RawSeries, TrendFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{CacheKey, StageCache};
use crate::config::{AssetConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, finish_with_failures, write_json, write_with, Failure};

pub const CALIBRATION_DIR: &str = "calibration";
pub const MANIFEST: &str = "manifest.json";

/// Index of a calibration directory, read by `analyze` and `backtest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub model: ModelKind,
    /// Successfully calibrated assets per class, sorted.
    pub classes: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassOutcome {
    trend: Option<TrendFit>,
    calibration: Option<ClassCalibration>,
    failures: Vec<Failure>,
}

pub fn series_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("series").join(format!("{id}.json"))
}

pub fn report_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("assets").join(format!("{id}.json"))
}

fn prepare_asset(asset: &AssetConfig, cfg: &RunConfig, cache: &StageCache) -> CliResult<CleanSeries> {
    let opts = PrepOptions {
        exclusion_windows: asset.exclusion_windows.clone(),
        drift_order: cfg.drift_order_override,
    };
    let mut key = CacheKey::new("prepare")
        .bytes("id", asset.id.as_bytes())
        .file("prices", &asset.csv_path)?
        .json("opts", &opts);
    if let Some(cpi) = &asset.cpi_path {
        key = key.file("cpi", cpi)?;
    }
    cache.get_or("prepare", &key.finish(), || {
        let mut raw = RawSeries::read_csv(&asset.id, &asset.csv_path)?;
        if let Some(cpi) = &asset.cpi_path {
            raw = raw.attach_cpi_csv(cpi)?;
        }
        let clean = CleanSeries::prepare(&raw, &opts)?;
        log::info!(
            "stage=prepare asset={} months={} drift_order={}",
            clean.id,
            clean.len(),
            clean.drift.order
        );
        Ok(clean)
    })
}

fn log_history(stage: &str, rep: &CalibrationReport) {
    for (i, ll) in rep.history.iter().enumerate() {
        log::info!("stage={stage} asset={} iter={i} loglik={ll:.9}", rep.asset);
    }
}

fn calibrate_class(class: &str, series: &[CleanSeries], cfg: &RunConfig) -> ClassOutcome {
    let mut failures = Vec::new();
    let fail_all = |series: &[CleanSeries], stage: &str, err: &CliError| -> Vec<Failure> {
        series.iter().map(|s| Failure::new(&s.id, class, stage, err)).collect()
    };
    if series.len() < 2 {
        let err = CliError::Config(format!("class '{class}' needs at least two usable assets"));
        return ClassOutcome {
            trend: None,
            calibration: None,
            failures: fail_all(series, "calibrate", &err),
        };
    }
    let set: Vec<(&str, &[f64])> = series.iter().map(|s| (s.id.as_str(), s.dedrifted.as_slice())).collect();
    let (trend, _) = match estimate_trend(&set, &cfg.alpha_grid) {
        Ok(t) => t,
        Err(e) => {
            return ClassOutcome {
                trend: None,
                calibration: None,
                failures: fail_all(series, "trend", &e.into()),
            }
        }
    };
    log::info!(
        "stage=trend class={class} alpha={} gamma={} gamma_err={}",
        trend.alpha,
        trend.gamma,
        trend.gamma_err
    );

    // Assets whose free fit fails are dropped before the class-wide search.
    let free = EmFixed::new(trend.alpha, trend.gamma, ModelKind::Linear);
    let em = cfg.em.options();
    let checks: Vec<CliResult<()>> = series.par_iter().map(|s| Ok(em_fit(s, &free, &em).map(|_| ())?)).collect();
    let mut usable = Vec::new();
    for (s, r) in series.iter().zip(checks) {
        match r {
            Ok(()) => usable.push(s.clone()),
            Err(e) => failures.push(Failure::new(&s.id, class, "em", &e)),
        }
    }
    if usable.len() < 2 {
        let err = CliError::Config(format!("class '{class}' has fewer than two assets with a converging fit"));
        failures.extend(fail_all(&usable, "calibrate", &err));
        return ClassOutcome {
            trend: Some(trend),
            calibration: None,
            failures,
        };
    }
    let opts = ClassOptions {
        em,
        std_errors: true,
        gamma_err: Some(trend.gamma_err),
    };
    match three_step_calibrate(&usable, trend.alpha, trend.gamma, cfg.model, &opts) {
        Ok(cal) => {
            for r in cal.step1.values() {
                log_history("em_free", r);
            }
            for r in cal.per_asset.values() {
                log_history("em_tied", r);
            }
            log::info!(
                "stage=sigma_ratio class={class} sigma_ratio={} sigma_ratio_err={}",
                cal.sigma_ratio,
                cal.sigma_ratio_err
            );
            ClassOutcome {
                trend: Some(trend),
                calibration: Some(cal),
                failures,
            }
        }
        Err(e) => {
            failures.extend(fail_all(&usable, "calibrate", &e.into()));
            ClassOutcome {
                trend: Some(trend),
                calibration: None,
                failures,
            }
        }
    }
}

/// Runs preparation, trend estimation and the three-step calibration for
/// every class and writes the reports under `<output>/calibration`.
pub fn run(cfg: &RunConfig, output: &Path) -> CliResult<PathBuf> {
    if cfg.assets.is_empty() {
        return Err(CliError::Config("no assets configured".into()));
    }
    let dir = ensure_dir(&output.join(CALIBRATION_DIR))?;
    let cache = StageCache::new(output.join(".cache"));

    let prepared: Vec<CliResult<CleanSeries>> =
        cfg.assets.par_iter().map(|a| prepare_asset(a, cfg, &cache)).collect();
    let mut failures = Vec::new();
    let mut classes: BTreeMap<String, Vec<CleanSeries>> = BTreeMap::new();
    for (a, r) in cfg.assets.iter().zip(prepared) {
        match r {
            Ok(s) => classes.entry(a.class.clone()).or_default().push(s),
            Err(e) => failures.push(Failure::new(&a.id, &a.class, "prepare", &e)),
        }
    }
    for series in classes.values_mut() {
        series.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut manifest = CalibrationManifest {
        model: cfg.model,
        classes: BTreeMap::new(),
    };
    let mut table: Vec<CalibrationReport> = Vec::new();
    for (class, series) in &classes {
        let key = CacheKey::new("calibrate")
            .json("series", series)
            .json("alpha_grid", &cfg.alpha_grid)
            .json("model", &cfg.model)
            .json("em", &cfg.em)
            .finish();
        let outcome = cache.get_or("calibrate", &key, || Ok(calibrate_class(class, series, cfg)))?;
        failures.extend(outcome.failures.iter().cloned());

        for s in series {
            write_json(&series_path(&dir, &s.id), s)?;
            write_with(&dir.join("series").join(format!("{}.csv", s.id)), |w| s.write_csv(w))?;
        }
        if let Some(trend) = &outcome.trend {
            write_json(&dir.join("trend").join(format!("{class}.json")), trend)?;
        }
        if let Some(cal) = &outcome.calibration {
            for r in cal.per_asset.values() {
                write_json(&report_path(&dir, &r.asset), r)?;
                table.push(r.clone());
            }
            write_json(&dir.join("classes").join(format!("{class}.json")), cal)?;
            manifest.classes.insert(class.clone(), cal.per_asset.keys().cloned().collect());
        }
    }
    write_with(&dir.join("table.csv"), |w| write_table_csv(w, &table))?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    finish_with_failures(&dir, failures, cfg.assets.len())?;
    Ok(dir)
}
