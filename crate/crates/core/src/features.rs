//! Multi-horizon log-momentum and rolling-risk features.
//!
//! Every feature is evaluated on the trailing window of exactly `horizon`
//! returns ending at (and including) the evaluation day. Columns are laid
//! out as `[Mom_h1, Risk_h1, Mom_h2, Risk_h2, ...]` for ascending horizons.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::ReturnSeries;

pub const DEFAULT_HORIZONS: [usize; 6] = [5, 10, 20, 30, 40, 50];

fn window(r: &ReturnSeries, horizon: usize, at: usize) -> Result<&[f64]> {
    if horizon == 0 || at >= r.len() || at + 1 < horizon {
        return Err(Error::InsufficientHistory { horizon, at });
    }
    Ok(&r.values()[at + 1 - horizon..=at])
}

/// Sum of the trailing `horizon` log-returns ending at `at`, i.e.
/// `log(P_at / P_{at-horizon})`.
pub fn momentum(r: &ReturnSeries, horizon: usize, at: usize) -> Result<f64> {
    Ok(window(r, horizon, at)?.iter().sum())
}

/// Population standard deviation of the trailing `horizon` returns ending at `at`.
pub fn risk(r: &ReturnSeries, horizon: usize, at: usize) -> Result<f64> {
    let w = window(r, horizon, at)?;
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// One feature row per post-warm-up day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    dates: Vec<NaiveDate>,
    rows: Vec<Vec<f64>>,
    horizons: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(dates: Vec<NaiveDate>, rows: Vec<Vec<f64>>, horizons: Vec<usize>) -> Result<Self> {
        validate_horizons(&horizons)?;
        if dates.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: rows.len(),
            });
        }
        let cols = 2 * horizons.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                expected: cols,
                found: bad.len(),
            });
        }
        Ok(Self {
            dates,
            rows,
            horizons,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn horizons(&self) -> &[usize] {
        &self.horizons
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        2 * self.horizons.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        column_names(&self.horizons)
    }

    /// Rows whose dates fall in `[from, to]`.
    pub fn select_dates(&self, from: NaiveDate, to: NaiveDate) -> FeatureMatrix {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d <= to);
        let hi = hi.max(lo);
        FeatureMatrix {
            dates: self.dates[lo..hi].to_vec(),
            rows: self.rows[lo..hi].to_vec(),
            horizons: self.horizons.clone(),
        }
    }

    /// `date,Mom_5,Risk_5,...` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "date,{}", self.column_names().join(","))?;
        for (d, row) in self.dates.iter().zip(&self.rows) {
            write!(w, "{d}")?;
            for x in row {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    }
}

pub fn column_names(horizons: &[usize]) -> Vec<String> {
    horizons
        .iter()
        .flat_map(|h| [format!("Mom_{h}"), format!("Risk_{h}")])
        .collect()
}

fn validate_horizons(horizons: &[usize]) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::InvalidHorizons("empty horizon list".into()));
    }
    if horizons[0] == 0 {
        return Err(Error::InvalidHorizons("horizons must be positive".into()));
    }
    if horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidHorizons(format!(
            "horizons must be strictly increasing: {horizons:?}"
        )));
    }
    Ok(())
}

/// Feature rows for every day with a full `max(horizons)` window behind it.
pub fn build_features(r: &ReturnSeries, horizons: &[usize]) -> Result<FeatureMatrix> {
    validate_horizons(horizons)?;
    let max_h = *horizons.last().expect("validated non-empty");
    if r.len() < max_h {
        return Err(Error::TooShort {
            needed: max_h,
            found: r.len(),
        });
    }

    let mut dates = Vec::with_capacity(r.len() + 1 - max_h);
    let mut rows = Vec::with_capacity(r.len() + 1 - max_h);
    for at in max_h - 1..r.len() {
        let mut row = Vec::with_capacity(2 * horizons.len());
        for &h in horizons {
            row.push(momentum(r, h, at)?);
            row.push(risk(r, h, at)?);
        }
        dates.push(r.dates()[at]);
        rows.push(row);
    }
    Ok(FeatureMatrix {
        dates,
        rows,
        horizons: horizons.to_vec(),
    })
}

/// Per-column means and population standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardizationParams {
    pub fn identity(n_cols: usize) -> Self {
        Self {
            means: vec![0.0; n_cols],
            stds: vec![1.0; n_cols],
        }
    }

    pub fn n_cols(&self) -> usize {
        self.means.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn standardize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn destandardize_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_len(row.len())?;
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(z, (m, s))| z * s + m)
            .collect())
    }
}

pub fn fit_standardizer(m: &FeatureMatrix) -> Result<StandardizationParams> {
    if m.n_rows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            found: m.n_rows(),
        });
    }
    let n = m.n_rows() as f64;
    let names = m.column_names();
    let mut means = Vec::with_capacity(m.n_cols());
    let mut stds = Vec::with_capacity(m.n_cols());
    for c in 0..m.n_cols() {
        let mean = m.rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = m
            .rows
            .iter()
            .map(|r| (r[c] - mean) * (r[c] - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        // identical values can leave rounding residue in the two-pass variance
        if std == 0.0 || std <= 1e-12 * mean.abs() {
            return Err(Error::ZeroVarianceColumn(names[c].clone()));
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(StandardizationParams { means, stds })
}

pub fn apply_standardizer(
    params: &StandardizationParams,
    m: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    params.check_len(m.n_cols())?;
    let rows = m
        .rows
        .iter()
        .map(|r| params.standardize_row(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        dates: m.dates.clone(),
        rows,
        horizons: m.horizons.clone(),
    })
}
