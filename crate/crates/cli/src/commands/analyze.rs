use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chiarella_core::analysis::backtest::backtest_signals;
use chiarella_core::analysis::bimodality::write_histogram_csv;
use chiarella_core::analysis::{
    average_class_hessian, empirical_verdict_at, js_distance, numerical_mispricing, numerical_verdict_at,
    silverman_test, sloppiness_hessian, variance_match, BacktestResult, BimodalityRow, JsDistance, MispricingSample,
    SilvermanResult, SloppinessReport, VarianceMatch,
};
use chiarella_core::filtering::smooth_auto;
use chiarella_core::{stats, CalibrationReport, CleanSeries, FilterResult, StateSpaceSpec};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::calibrate::{report_path, series_path, CalibrationManifest, CALIBRATION_DIR, MANIFEST};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, finish_with_failures, read_json, write_json, write_with, Failure};

pub const ANALYSIS_DIR: &str = "analysis";
pub const BACKTEST_DIR: &str = "backtest";

/// Per-asset seed, independent of the asset's position in the config.
pub fn asset_seed(base: u64, asset: &str) -> u64 {
    let digest = Sha256::digest(asset.as_bytes());
    base ^ u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Calibration outputs of one asset.
pub struct Calibrated {
    pub class: String,
    pub series: CleanSeries,
    pub report: CalibrationReport,
}

/// Loads every asset listed in the calibration manifest.
pub fn load_calibration(dir: &Path) -> CliResult<(CalibrationManifest, Vec<Calibrated>)> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(CliError::Config(format!(
            "no calibration found at {} (run `calibrate` first)",
            dir.display()
        )));
    }
    let manifest: CalibrationManifest = read_json(&manifest_path)?;
    let mut out = Vec::new();
    for (class, ids) in &manifest.classes {
        for id in ids {
            out.push(Calibrated {
                class: class.clone(),
                series: read_json(&series_path(dir, id))?,
                report: read_json(&report_path(dir, id))?,
            });
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("calibration at {} lists no assets", dir.display())));
    }
    Ok((manifest, out))
}

pub fn calibration_dir(output: &Path, flag: Option<&Path>) -> PathBuf {
    flag.map_or_else(|| output.join(CALIBRATION_DIR), Path::to_path_buf)
}

fn filter_series(a: &Calibrated) -> CliResult<FilterResult> {
    let spec = StateSpaceSpec::new(a.report.theta, a.series.dedrifted.clone())?;
    Ok(smooth_auto(&spec)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub asset: String,
    pub sr_trend: f64,
    pub sr_value: f64,
    pub period: (NaiveDate, NaiveDate),
    pub periods: Vec<chiarella_core::analysis::backtest::PeriodSharpe>,
}

impl BacktestSummary {
    fn new(asset: &str, r: &BacktestResult) -> Self {
        Self {
            asset: asset.to_string(),
            sr_trend: r.sr_trend,
            sr_value: r.sr_value,
            period: r.period,
            periods: r.periods.clone(),
        }
    }
}

fn run_backtest(a: &Calibrated, f: &FilterResult, cfg: &RunConfig) -> CliResult<BacktestResult> {
    let periods: Vec<(NaiveDate, NaiveDate)> = cfg.backtest.periods.iter().map(|p| (p.start, p.end)).collect();
    Ok(backtest_signals(&a.report.theta, &a.series, f, &periods)?)
}

fn write_backtest(dir: &Path, results: &[(String, BacktestResult)]) -> CliResult<()> {
    let dir = ensure_dir(dir)?;
    let mut summaries = Vec::new();
    for (id, r) in results {
        write_with(&dir.join(format!("{id}.csv")), |w| {
            let mut w = csv::Writer::from_writer(w);
            w.write_record(["date", "pnl_trend", "pnl_value"])?;
            for i in 0..r.dates.len() {
                w.write_record(&[
                    r.dates[i].format("%Y-%m-%d").to_string(),
                    r.pnl_trend[i].to_string(),
                    r.pnl_value[i].to_string(),
                ])?;
            }
            w.flush()?;
            Ok(())
        })?;
        summaries.push(BacktestSummary::new(id, r));
    }
    write_json(&dir.join("summary.json"), &summaries)
}

/// Everything computed for one asset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssetAnalysis {
    pub asset: String,
    pub class: String,
    pub seed: u64,
    pub filtered: SilvermanResult,
    pub smoothed: SilvermanResult,
    pub numerical: SilvermanResult,
    /// Simulation steps per point of the numerical sample.
    pub numerical_stride: usize,
    pub variance_match: VarianceMatch,
    pub js: JsDistance,
    pub row: BimodalityRow,
}

struct AssetOutput {
    analysis: AssetAnalysis,
    empirical: Vec<f64>,
    numerical: Vec<f64>,
    sloppiness: SloppinessReport,
    backtest: BacktestResult,
}

fn analyze_asset(a: &Calibrated, cfg: &RunConfig, base_seed: u64) -> CliResult<AssetOutput> {
    let id = a.report.asset.as_str();
    let seed = asset_seed(base_seed, id);
    let sv = &cfg.silverman;
    let f = filter_series(a)?;
    let filtered = MispricingSample::from_filter(&a.series.dedrifted, &f, false)?;
    let smoothed = MispricingSample::from_filter(&a.series.dedrifted, &f, true)?;
    let p_f = silverman_test(&filtered.delta, 1, sv.n_boot, seed)?;
    let p_s = silverman_test(&smoothed.delta, 1, sv.n_boot, seed.wrapping_add(1))?;
    log::info!(
        "stage=silverman asset={id} p_filtered={} p_smoothed={}",
        p_f.p_value,
        p_s.p_value
    );

    let vm = variance_match(
        &a.report.theta,
        &a.series.dedrifted,
        stats::mean(&filtered.delta),
        stats::variance(&filtered.delta),
        a.report.model,
        &cfg.variance_match.options(seed),
    )?;
    log::info!(
        "stage=variance_match asset={id} matched={} loglik={} loglik_drop={}",
        vm.matched,
        vm.loglik_after,
        vm.loglik_drop
    );
    let numerical = numerical_mispricing(&vm.theta, &cfg.numerical.protocol(seed))?;
    let p_n = silverman_test(&numerical.delta, 1, sv.n_boot, seed.wrapping_add(2))?;
    let js = js_distance(&filtered.delta, &numerical.delta)?;
    log::info!(
        "stage=numerical asset={id} points={} stride={} p_numerical={} js={}",
        numerical.n,
        numerical.stride,
        p_n.p_value,
        js.value
    );
    let row = BimodalityRow {
        asset: id.to_string(),
        p_filtered: p_f.p_value,
        p_smoothed: p_s.p_value,
        p_numerical: p_n.p_value,
        verdict_empirical: empirical_verdict_at(p_f.p_value, p_s.p_value, sv.significance),
        verdict_numerical: numerical_verdict_at(p_n.p_value, sv.significance),
        js_distance: js.value,
    };
    let sloppiness = sloppiness_hessian(&a.report.theta, a.report.model, &cfg.sloppiness.options())?;
    log::info!(
        "stage=sloppiness asset={id} decades={}",
        sloppiness.decades_spanned
    );
    let backtest = run_backtest(a, &f, cfg)?;
    Ok(AssetOutput {
        analysis: AssetAnalysis {
            asset: id.to_string(),
            class: a.class.clone(),
            seed,
            filtered: p_f,
            smoothed: p_s,
            numerical: p_n,
            numerical_stride: numerical.stride,
            variance_match: vm,
            js,
            row,
        },
        empirical: filtered.delta,
        numerical: numerical.delta,
        sloppiness,
        backtest,
    })
}

/// Bimodality, Jensen–Shannon, sloppiness and backtest reports under
/// `<output>/analysis`.
pub fn run(cfg: &RunConfig, seed: Option<u64>, output: &Path, calibration: Option<&Path>) -> CliResult<PathBuf> {
    let seed = seed.ok_or_else(|| CliError::Config("analyze needs a seed (--seed or `seed` in the config)".into()))?;
    let (_, assets) = load_calibration(&calibration_dir(output, calibration))?;
    let dir = ensure_dir(&output.join(ANALYSIS_DIR))?;
    let results: Vec<CliResult<AssetOutput>> = assets.par_iter().map(|a| analyze_asset(a, cfg, seed)).collect();

    let mut failures = Vec::new();
    let mut rows = Vec::new();
    let mut backtests = Vec::new();
    let mut by_class: BTreeMap<&str, Vec<SloppinessReport>> = BTreeMap::new();
    for (a, r) in assets.iter().zip(results) {
        let id = &a.report.asset;
        match r {
            Ok(out) => {
                write_json(&dir.join("assets").join(format!("{id}.json")), &out.analysis)?;
                let bins = (out.empirical.len() as f64).sqrt().floor() as usize;
                write_with(&dir.join("histograms").join(format!("{id}.csv")), |w| {
                    write_histogram_csv(w, &out.empirical, &out.numerical, bins.max(1))
                })?;
                write_json(&dir.join("sloppiness").join(format!("{id}.json")), &out.sloppiness)?;
                rows.push(out.analysis.row);
                backtests.push((id.clone(), out.backtest));
                by_class.entry(a.class.as_str()).or_default().push(out.sloppiness);
            }
            Err(e) => failures.push(Failure::new(id, &a.class, "analyze", &e)),
        }
    }
    for (class, reports) in &by_class {
        match average_class_hessian(reports) {
            Ok(avg) => {
                log::info!("stage=sloppiness class={class} decades={}", avg.decades_spanned);
                write_json(&dir.join("sloppiness").join("classes").join(format!("{class}.json")), &avg)?;
            }
            Err(e) => log::warn!("stage=sloppiness class={class} error={e}"),
        }
    }
    write_json(&dir.join("bimodality.json"), &rows)?;
    write_with(&dir.join("bimodality.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_backtest(&dir.join(BACKTEST_DIR), &backtests)?;
    finish_with_failures(&dir, failures, assets.len())?;
    Ok(dir)
}

/// Only the signal backtest, under `<output>/backtest`.
pub fn run_backtest_only(cfg: &RunConfig, output: &Path, calibration: Option<&Path>) -> CliResult<PathBuf> {
    let (_, assets) = load_calibration(&calibration_dir(output, calibration))?;
    let dir = ensure_dir(&output.join(BACKTEST_DIR))?;
    let results: Vec<CliResult<BacktestResult>> = assets
        .par_iter()
        .map(|a| filter_series(a).and_then(|f| run_backtest(a, &f, cfg)))
        .collect();
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (a, r) in assets.iter().zip(results) {
        match r {
            Ok(b) => {
                log::info!(
                    "stage=backtest asset={} sr_trend={} sr_value={}",
                    a.report.asset,
                    b.sr_trend,
                    b.sr_value
                );
                ok.push((a.report.asset.clone(), b));
            }
            Err(e) => failures.push(Failure::new(&a.report.asset, &a.class, "backtest", &e)),
        }
    }
    write_backtest(&dir, &ok)?;
    finish_with_failures(&dir, failures, assets.len())?;
    Ok(dir)
}
