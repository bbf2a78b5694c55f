use std::path::{Path, PathBuf};

use chiarella_core::model::{mispricing_velocity, nullclines};
use chiarella_core::ChiarellaParams;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, write_with};

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + i as f64 * step }).collect()
}

/// Writes `nullclines.csv` (`grid_n` rows) and `vector_field.csv`
/// (`grid_n²` rows of `(δ, m, δ̇, Ṁ)`) under `<output>/phase_portrait`.
pub fn run(cfg: &RunConfig, output: &Path) -> CliResult<PathBuf> {
    let pp = cfg
        .phase_portrait
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [phase_portrait] section".into()))?;
    let params: ChiarellaParams = pp.params.into();
    if !(params.kappa > 0.0) {
        return Err(CliError::Config(format!(
            "phase portrait needs kappa > 0, got {}",
            params.kappa
        )));
    }
    if params.kappa3 != 0.0 {
        return Err(CliError::Config("phase portrait is defined for the linear model only".into()));
    }
    params.validate()?;

    let ms = linspace(pp.m_range[0], pp.m_range[1], pp.grid_n);
    let rows: Vec<(f64, f64, f64)> = ms
        .iter()
        .map(|&m| {
            let (d, mm) = nullclines(&params, m);
            (m, d, mm)
        })
        .collect();
    let [d_lo, d_hi] = pp.delta_range.unwrap_or_else(|| {
        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.1).min(r.2), hi.max(r.1).max(r.2))
        });
        if hi > lo {
            [lo, hi]
        } else {
            pp.m_range
        }
    });
    let deltas = linspace(d_lo, d_hi, pp.grid_n);

    let dir = ensure_dir(&output.join("phase_portrait"))?;
    write_with(&dir.join("nullclines.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["m", "delta_nullcline", "m_nullcline"])?;
        for (m, d, mm) in &rows {
            w.write_record(&[m.to_string(), d.to_string(), mm.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_with(&dir.join("vector_field.csv"), |w| {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["delta", "m", "d_delta", "d_m"])?;
        for &d in &deltas {
            for &m in &ms {
                let (dd, dm) = mispricing_velocity(d, m, &params);
                w.write_record(&[d.to_string(), m.to_string(), dd.to_string(), dm.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    log::info!("stage=phase_portrait rows={} field_rows={}", rows.len(), ms.len() * deltas.len());
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::linspace;

    #[test]
    fn linspace_hits_both_ends() {
        let x = linspace(-2.0, 2.0, 5);
        assert_eq!(x, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }
}
