//! Monthly price ingestion, cleaning and de-drifting.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drift::{legendre_basis, DriftModel};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as rank loss.
const RANK_TOL: f64 = 1e-12;

/// Nominal monthly prices as read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub id: String,
    pub dates: Vec<NaiveDate>,
    pub prices: Vec<f64>,
    pub cpi: Option<Vec<f64>>,
}

/// Inclusive date range removed from a series before stitching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

/// Log-price series after cleaning, with its fitted drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanSeries {
    pub id: String,
    pub dates: Vec<NaiveDate>,
    pub logp: Vec<f64>,
    /// `p̃_t = p_t − G_t`.
    pub dedrifted: Vec<f64>,
    pub drift: DriftModel,
}

fn month_index(d: &NaiveDate) -> i64 {
    d.year() as i64 * 12 + d.month0() as i64
}

/// Parses `YYYY-MM-DD` or `YYYY-MM` (taken as the first of the month).
pub fn parse_date(s: &str) -> Result<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d"))
        .map_err(|_| Error::InvalidInput(format!("unrecognised date '{s}'")))
}

/// Monthly dates starting at `start`.
pub fn monthly_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| {
            start
                .checked_add_months(Months::new(i as u32))
                .expect("date within chrono range")
        })
        .collect()
}

impl RawSeries {
    pub fn new(id: impl Into<String>, dates: Vec<NaiveDate>, prices: Vec<f64>, cpi: Option<Vec<f64>>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            dates,
            prices,
            cpi,
        };
        s.validate()?;
        Ok(s)
    }

    /// Series with prices `exp(logp)` on consecutive months from `start`.
    pub fn from_log_prices(id: impl Into<String>, start: NaiveDate, logp: &[f64]) -> Result<Self> {
        Self::new(
            id,
            monthly_dates(start, logp.len()),
            logp.iter().map(|x| x.exp()).collect(),
            None,
        )
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dates.len() != self.prices.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} dates but {} prices",
                self.id,
                self.dates.len(),
                self.prices.len()
            )));
        }
        if let Some(i) = self.prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "{}: price at row {i} is not a positive number ({})",
                self.id, self.prices[i]
            )));
        }
        if let Some(i) = self
            .dates
            .windows(2)
            .position(|w| month_index(&w[1]) <= month_index(&w[0]))
        {
            return Err(Error::InvalidInput(format!(
                "{}: dates not strictly increasing by month at row {}",
                self.id,
                i + 1
            )));
        }
        if let Some(cpi) = &self.cpi {
            if cpi.len() != self.prices.len() {
                return Err(Error::InvalidInput(format!(
                    "{}: CPI has {} rows, prices have {}",
                    self.id,
                    cpi.len(),
                    self.prices.len()
                )));
            }
            if cpi.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(Error::InvalidInput(format!("{}: CPI must be positive", self.id)));
            }
        }
        Ok(())
    }

    /// Reads a `date,price[,cpi]` CSV.
    pub fn from_reader<R: Read>(id: impl Into<String>, reader: R) -> Result<Self> {
        let id = id.into();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let (Some(di), Some(pi)) = (col("date"), col("price")) else {
            return Err(Error::InvalidInput(format!(
                "{id}: CSV header must contain 'date' and 'price'"
            )));
        };
        let ci = col("cpi");
        let mut dates = Vec::new();
        let mut prices = Vec::new();
        let mut cpi = ci.map(|_| Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            dates.push(parse_date(field(di))?);
            prices.push(parse_number(field(pi), &id, row)?);
            if let (Some(c), Some(ci)) = (cpi.as_mut(), ci) {
                c.push(parse_number(field(ci), &id, row)?);
            }
        }
        Self::new(id, dates, prices, cpi)
    }

    pub fn read_csv(id: impl Into<String>, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(id, file)
    }

    /// Attaches a CPI series read from a `date,cpi` CSV, matched by month.
    pub fn attach_cpi_csv(mut self, path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let mut by_month = std::collections::HashMap::new();
        let headers = rdr.headers()?.clone();
        let ci = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case("cpi"))
            .ok_or_else(|| Error::InvalidInput(format!("{}: CPI file lacks a 'cpi' column", path.display())))?;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let d = parse_date(rec.get(0).unwrap_or(""))?;
            by_month.insert(month_index(&d), parse_number(rec.get(ci).unwrap_or(""), &self.id, row)?);
        }
        let cpi = self
            .dates
            .iter()
            .map(|d| {
                by_month.get(&month_index(d)).copied().ok_or_else(|| {
                    Error::InvalidInput(format!("{}: no CPI value for {d}", self.id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.cpi = Some(cpi);
        self.validate()?;
        Ok(self)
    }

    pub fn log_prices(&self) -> Vec<f64> {
        self.prices.iter().map(|p| p.ln()).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match &self.cpi {
            Some(_) => w.write_record(["date", "price", "cpi"])?,
            None => w.write_record(["date", "price"])?,
        }
        for i in 0..self.len() {
            let mut rec = vec![self.dates[i].format("%Y-%m-%d").to_string(), self.prices[i].to_string()];
            if let Some(c) = &self.cpi {
                rec.push(c[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_number(s: &str, id: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("{id}: row {row}: '{s}' is not a number")))
}

/// Inflation adjustment `price_t · cpi_t / cpi_last`; the last price is
/// unchanged.
pub fn cpi_adjust(raw: &RawSeries) -> Result<RawSeries> {
    raw.validate()?;
    let cpi = raw
        .cpi
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("{}: no CPI series to adjust with", raw.id)))?;
    let last = *cpi
        .last()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty series", raw.id)))?;
    let prices = raw
        .prices
        .iter()
        .zip(cpi)
        .map(|(p, c)| p * (c / last))
        .collect();
    Ok(RawSeries {
        id: raw.id.clone(),
        dates: raw.dates.clone(),
        prices,
        cpi: None,
    })
}

/// Removes the rows inside `windows` and closes every gap.
///
/// Gaps come from the removed windows and from months missing in the input.
/// At each gap the whole segment to its left is shifted in log space so the
/// last pre-gap log-price equals the first post-gap one; the return across
/// the seam is therefore zero. Dates keep their original labels.
pub fn stitch_gaps(raw: &RawSeries, windows: &[ExclusionWindow]) -> Result<RawSeries> {
    raw.validate()?;
    if raw.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty series", raw.id)));
    }
    for w in windows {
        if w.end < w.start {
            return Err(Error::InvalidInput(format!(
                "exclusion window {} .. {} ends before it starts",
                w.start, w.end
            )));
        }
    }
    let excluded = |d: &NaiveDate| windows.iter().any(|w| *d >= w.start && *d <= w.end);
    let keep: Vec<usize> = (0..raw.len()).filter(|&i| !excluded(&raw.dates[i])).collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: exclusion windows cover the entire series",
            raw.id
        )));
    }

    let logp: Vec<f64> = keep.iter().map(|&i| raw.prices[i].ln()).collect();
    let dates: Vec<NaiveDate> = keep.iter().map(|&i| raw.dates[i]).collect();
    // Walk from the right so each seam sees the final shift of its right
    // neighbour.
    let mut shifts = vec![0.0; logp.len()];
    for j in (1..keep.len()).rev() {
        let contiguous = keep[j] == keep[j - 1] + 1
            && month_index(&raw.dates[keep[j]]) == month_index(&raw.dates[keep[j - 1]]) + 1;
        shifts[j - 1] = if contiguous {
            shifts[j]
        } else {
            logp[j] + shifts[j] - logp[j - 1]
        };
    }
    let prices = logp.iter().zip(&shifts).map(|(l, s)| (l + s).exp()).collect();
    let cpi = raw.cpi.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect());
    RawSeries::new(raw.id.clone(), dates, prices, cpi)
}

/// Whole years between the first and last date.
pub fn whole_years(dates: &[NaiveDate]) -> usize {
    match (dates.first(), dates.last()) {
        (Some(a), Some(b)) => ((month_index(b) - month_index(a)).max(0) / 12) as usize,
        _ => 0,
    }
}

/// Drift order `k = ⌊T/10⌋` for `T` whole years.
pub fn drift_order_for_years(years: usize) -> usize {
    years / 10
}

/// Least-squares drift of order `⌊years/10⌋` on index time `0..n−1`.
pub fn fit_drift(logp: &[f64], years: usize) -> Result<DriftModel> {
    fit_drift_with_order(logp, drift_order_for_years(years))
}

/// Least-squares Legendre fit of the given order on index time `0..n−1`.
pub fn fit_drift_with_order(logp: &[f64], order: usize) -> Result<DriftModel> {
    let n = logp.len();
    if n < order + 1 || n < 2 {
        return Err(Error::InvalidInput(format!(
            "drift of order {order} needs at least {} points, got {n}",
            (order + 1).max(2)
        )));
    }
    if logp.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("log-prices must be finite".into()));
    }
    let t_end = (n - 1) as f64;
    let mut design = DMatrix::<f64>::zeros(n, order + 1);
    let mut row = vec![0.0; order + 1];
    for i in 0..n {
        let x = 2.0 * i as f64 / t_end - 1.0;
        legendre_basis(order, x, &mut row);
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
    }
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > RANK_TOL * s_max) {
        return Err(Error::RankDeficient { order });
    }
    let y = DVector::from_column_slice(logp);
    let coef = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numerical(format!("drift least squares: {e}")))?;
    DriftModel::from_coefficients(coef.iter().copied().collect(), (0.0, t_end))
}

/// `p̃_t = p_t − G_t` on index time starting at the drift's domain start.
pub fn dedrift(logp: &[f64], drift: &DriftModel) -> Result<Vec<f64>> {
    let g = drift.values_on_grid(logp.len())?;
    Ok(logp.iter().zip(&g).map(|(p, g)| p - g).collect())
}

/// Inverse of [`dedrift`].
pub fn redrift(series: &[f64], drift: &DriftModel) -> Result<Vec<f64>> {
    let g = drift.values_on_grid(series.len())?;
    Ok(series.iter().zip(&g).map(|(p, g)| p + g).collect())
}

/// Options of the cleaning pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepOptions {
    pub exclusion_windows: Vec<ExclusionWindow>,
    /// Overrides `k = ⌊T/10⌋`.
    pub drift_order: Option<usize>,
}

impl CleanSeries {
    /// CPI adjustment (when CPI is present), gap stitching, log transform,
    /// drift fit and de-drifting.
    pub fn prepare(raw: &RawSeries, opts: &PrepOptions) -> Result<Self> {
        let adjusted = if raw.cpi.is_some() { cpi_adjust(raw)? } else { raw.clone() };
        let stitched = stitch_gaps(&adjusted, &opts.exclusion_windows)?;
        let logp = stitched.log_prices();
        let order = opts
            .drift_order
            .unwrap_or_else(|| drift_order_for_years(whole_years(&raw.dates)));
        let drift = fit_drift_with_order(&logp, order)?;
        let dedrifted = dedrift(&logp, &drift)?;
        Ok(Self {
            id: raw.id.clone(),
            dates: stitched.dates,
            logp,
            dedrifted,
            drift,
        })
    }

    /// Wraps an already de-drifted series (e.g. simulated) with a zero drift.
    pub fn from_dedrifted(id: impl Into<String>, start: NaiveDate, dedrifted: Vec<f64>) -> Result<Self> {
        let n = dedrifted.len();
        if n < 2 {
            return Err(Error::InvalidInput("series needs at least two points".into()));
        }
        Ok(Self {
            id: id.into(),
            dates: monthly_dates(start, n),
            logp: dedrifted.clone(),
            dedrifted,
            drift: DriftModel::zero(0.0, (n - 1) as f64),
        })
    }

    pub fn len(&self) -> usize {
        self.dedrifted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dedrifted.is_empty()
    }

    /// `G_t` on the series' index grid.
    pub fn drift_values(&self) -> Result<Vec<f64>> {
        self.drift.values_on_grid(self.len())
    }

    /// Writes `date,logp,G,dedrifted`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let g = self.drift_values()?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "logp", "G", "dedrifted"])?;
        for i in 0..self.len() {
            w.write_record(&[
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.logp[i].to_string(),
                g[i].to_string(),
                self.dedrifted[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
