use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chiarella_cli::output::tree_digest;
use chiarella_core::model::nullclines;
use chiarella_core::ChiarellaParams;
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn chiarella(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chiarella"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = chiarella(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPIRAL: &str = "kappa = 0.01\nalpha = 0.14285714285714285\nbeta = 0.5\ngamma = 2.0";
const CYCLE: &str = "kappa = 0.05\nalpha = 0.14285714285714285\nbeta = 0.65\ngamma = 10.0";

#[test]
fn simulate_classifies_both_regimes() {
    for (params, regime) in [(SPIRAL, "StableSpiral"), (CYCLE, "LimitCycle")] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(
            dir.path(),
            &format!("[simulate]\nmode = \"deterministic\"\nhorizon = 3000.0\ninit = [0.5, 0.0, 0.0]\n[simulate.params]\n{params}\n"),
        );
        run_ok(&["--config", &cfg, "--output", s(dir.path()), "simulate"]);
        let summary = read_json(&dir.path().join("simulate/summary.json"));
        assert_eq!(summary["regime"], regime);
        let csv = fs::read_to_string(dir.path().join("simulate/trajectory.csv")).unwrap();
        assert_eq!(csv.lines().count(), 300_002);
    }
}

#[test]
fn stochastic_simulation_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("[simulate]\nmode = \"sde\"\nhorizon = 10.0\n[simulate.params]\n{SPIRAL}\nsigma_N = 0.1\n"),
    );
    let out = chiarella(&["--config", &cfg, "--output", s(dir.path()), "simulate"]);
    assert_eq!(code(&out), 2);
    run_ok(&["--config", &cfg, "--output", s(dir.path()), "--seed", "3", "simulate"]);
    let summary = read_json(&dir.path().join("simulate/summary.json"));
    assert_eq!(summary["seed"], 3);
}

#[test]
fn phase_portrait_shapes_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("[phase_portrait]\ngrid_n = 50\n[phase_portrait.params]\n{SPIRAL}\n"));
    run_ok(&["--config", &cfg, "--output", s(dir.path()), "phase-portrait"]);
    let params = ChiarellaParams::linear(0.01, 1.0 / 7.0, 0.5, 2.0);
    let mut rdr = csv::Reader::from_path(dir.path().join("phase_portrait/nullclines.csv")).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let (d, m) = nullclines(&params, r[0]);
        assert!((d - r[1]).abs() <= 1e-12 && (m - r[2]).abs() <= 1e-12);
    }
    let field = fs::read_to_string(dir.path().join("phase_portrait/vector_field.csv")).unwrap();
    assert_eq!(field.lines().count(), 2501);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("[phase_portrait]\ngrid_n = 51\ndelta_range = [-1.0, 1.0]\n[phase_portrait.params]\n{CYCLE}\n"),
    );
    run_ok(&["--config", &cfg, "--output", s(dir.path()), "phase-portrait"]);
    let mut rdr = csv::Reader::from_path(dir.path().join("phase_portrait/vector_field.csv")).unwrap();
    let origin = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .find(|r| r[0] == 0.0 && r[1] == 0.0)
        .expect("origin on the grid");
    assert_eq!((origin[2], origin[3]), (0.0, 0.0));
}

#[test]
fn phase_portrait_rejects_bad_models() {
    for extra in ["kappa = 0.0\nalpha = 0.2\nbeta = 0.5\ngamma = 2.0", "kappa = 0.01\nkappa3 = 0.5\nalpha = 0.2\nbeta = 0.5\ngamma = 2.0"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &format!("[phase_portrait.params]\n{extra}\n"));
        let out = chiarella(&["--config", &cfg, "--output", s(dir.path()), "phase-portrait"]);
        assert_eq!(code(&out), 2, "{extra}");
    }
}

#[test]
fn input_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n");
    assert_eq!(code(&chiarella(&["--config", &cfg, "--output", s(dir.path()), "calibrate"])), 2);
    assert_eq!(code(&chiarella(&["--config", &cfg, "--output", s(dir.path()), "analyze"])), 2);
    assert_eq!(code(&chiarella(&["--config", &cfg, "--output", s(dir.path()), "backtest"])), 2);
    let bad = write_config(dir.path(), "[silverman]\nsignificance = 2.0\n");
    assert_eq!(code(&chiarella(&["--config", &bad, "simulate"])), 2);
    assert_eq!(code(&chiarella(&["simulate"])), 2);
}

#[test]
fn partial_failure_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixtures().join("data");
    let mut text = String::from("seed = 1\ndrift_order_override = 1\n");
    for (id, file) in [("lin0", "lin0.csv"), ("lin1", "lin1.csv"), ("lin2", "lin2.csv"), ("gone", "missing.csv")] {
        text += &format!(
            "[[assets]]\nid = \"{id}\"\ncsv_path = \"{}\"\nclass = \"c\"\n",
            data.join(file).display()
        );
    }
    let cfg = write_config(dir.path(), &text);
    let out = chiarella(&["--config", &cfg, "--output", s(dir.path()), "calibrate"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let failures = read_json(&dir.path().join("calibration/failures.json"));
    let failures = failures.as_array().unwrap();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["asset"], "gone");
    assert_eq!(failures[0]["stage"], "prepare");
    for id in ["lin0", "lin1", "lin2"] {
        assert!(dir.path().join(format!("calibration/assets/{id}.json")).exists());
    }
}

fn fixture_run(config: &str, out: &Path) -> (String, String) {
    let cfg = fixtures().join(config);
    let cal = run_ok(&["--config", s(&cfg), "--output", s(out), "calibrate"]);
    run_ok(&["--config", s(&cfg), "--output", s(out), "analyze"]);
    (tree_digest(out).unwrap(), String::from_utf8_lossy(&cal.stderr).into_owned())
}

#[test]
fn linear_fixture_end_to_end() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ha, log) = fixture_run("linear.toml", a.path());
    let (hb, _) = fixture_run("linear.toml", b.path());
    assert_eq!(ha, hb);

    assert!(log.lines().any(|l| l.contains("stage=em_free asset=lin0 iter=0 loglik=")));
    let class = read_json(&a.path().join("calibration/classes/synthetic.json"));
    let ratio = class["sigma_ratio"].as_f64().unwrap();
    assert!((3.3..=4.8).contains(&ratio), "{ratio}");
    let table = fs::read_to_string(a.path().join("calibration/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    let rows = read_json(&a.path().join("analysis/bimodality.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert_eq!(r["verdict_numerical"], "unimodal", "{r}");
        let js = r["js_distance"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&js));
    }
    for id in ["lin0", "lin4"] {
        let slop = read_json(&a.path().join(format!("analysis/sloppiness/{id}.json")));
        assert!(slop["decades_spanned"].as_f64().unwrap() > 0.0);
        assert!(a.path().join(format!("analysis/histograms/{id}.csv")).exists());
        assert!(a.path().join(format!("analysis/backtest/{id}.csv")).exists());
    }
    assert!(a.path().join("analysis/sloppiness/classes/synthetic.json").exists());
    let failures = read_json(&a.path().join("analysis/failures.json"));
    assert!(failures.as_array().unwrap().is_empty());
}

#[test]
fn cubic_fixture_is_bimodal() {
    let dir = tempfile::tempdir().unwrap();
    fixture_run("cubic.toml", dir.path());
    let rows = read_json(&dir.path().join("analysis/bimodality.json"));
    for r in rows.as_array().unwrap() {
        assert_eq!(r["verdict_numerical"], "bimodal", "{r}");
    }
}

#[test]
fn reports_regenerate_from_the_stage_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("linear.toml");
    run_ok(&["--config", s(&cfg), "--output", s(dir.path()), "calibrate"]);
    let report = dir.path().join("calibration/assets/lin2.json");
    let before = fs::read(&report).unwrap();
    fs::remove_dir_all(dir.path().join("calibration")).unwrap();
    let again = run_ok(&["--config", s(&cfg), "--output", s(dir.path()), "calibrate"]);
    let log = String::from_utf8_lossy(&again.stderr);
    assert!(!log.contains("stage=em_"), "EM ran again:\n{log}");
    assert_eq!(fs::read(&report).unwrap(), before);
}

#[test]
fn backtest_command_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixtures().join("linear.toml");
    run_ok(&["--config", s(&cfg), "--output", s(dir.path()), "calibrate"]);
    run_ok(&["--config", s(&cfg), "--output", s(dir.path()), "--workers", "2", "backtest"]);
    let summary = read_json(&dir.path().join("backtest/summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 5);
    assert!(summary[0]["sr_trend"].as_f64().unwrap().is_finite());
}
