//! Daily price ingestion, log-returns and chronological train/test splits.
//!
//! Input files are UTF-8 CSV with a `date,close` header and ISO-8601 dates.
//! Rows may arrive in any order; they are sorted on load. Horizons elsewhere
//! in the crate count rows (trading days), so dates are only ever compared,
//! never subtracted.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dated close prices for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    asset_id: String,
    dates: Vec<NaiveDate>,
    prices: Vec<f64>,
}

impl PriceSeries {
    /// Builds a series from already-ordered columns, checking every invariant.
    pub fn new(
        asset_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        prices: Vec<f64>,
    ) -> Result<Self> {
        if dates.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: prices.len(),
            });
        }
        if dates.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                found: dates.len(),
            });
        }
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] == w[0] {
                return Err(Error::DuplicateDate(w[1].to_string()));
            }
            if w[1] < w[0] {
                return Err(Error::MalformedRow {
                    line: i + 3,
                    reason: format!("date {} not after {}", w[1], w[0]),
                });
            }
        }
        for (i, &p) in prices.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::MalformedRow {
                    line: i + 2,
                    reason: format!("non-finite price {p}"),
                });
            }
            if p <= 0.0 {
                return Err(Error::NonPositivePrice {
                    line: i + 2,
                    price: p,
                });
            }
        }
        Ok(Self {
            asset_id: asset_id.into(),
            dates,
            prices,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Writes the series as `date,close` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "date,close")?;
        for (d, p) in self.dates.iter().zip(&self.prices) {
            writeln!(w, "{d},{p}")?;
        }
        w.flush()
    }
}

/// Daily log-returns, each dated by the later day of its price pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    dates: Vec<NaiveDate>,
    returns: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(dates: Vec<NaiveDate>, returns: Vec<f64>) -> Result<Self> {
        if dates.len() != returns.len() {
            return Err(Error::DimensionMismatch {
                expected: dates.len(),
                found: returns.len(),
            });
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams(format!(
                "return dates not strictly increasing at {}",
                w[1]
            )));
        }
        Ok(Self { dates, returns })
    }

    /// Convenience for tests and synthetic data: consecutive days from 2000-01-01.
    pub fn from_values(returns: Vec<f64>) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates = start.iter_days().take(returns.len()).collect();
        Self { dates, returns }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ReturnSeries {
        ReturnSeries {
            dates: self.dates[range.clone()].to_vec(),
            returns: self.returns[range].to_vec(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    close: String,
}

/// Parses a `date,close` CSV stream. Rows are sorted ascending by date.
pub fn load_prices<R: Read>(source: R, asset_id: &str) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "close" {
        return Err(Error::BadHeader(
            headers.iter().collect::<Vec<_>>().join(","),
        ));
    }

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::MalformedRow {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
        let date =
            NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| Error::MalformedRow {
                line,
                reason: format!("bad date `{}`: {e}", row.date),
            })?;
        let price: f64 = row.close.parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("bad close `{}`", row.close),
        })?;
        if !price.is_finite() {
            return Err(Error::MalformedRow {
                line,
                reason: format!("non-finite close `{}`", row.close),
            });
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice { line, price });
        }
        rows.push((date, price, line));
    }

    if rows.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            found: rows.len(),
        });
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate(w[1].0.to_string()));
    }

    let (dates, prices) = rows.into_iter().map(|(d, p, _)| (d, p)).unzip();
    PriceSeries::new(asset_id, dates, prices)
}

/// Loads one CSV file; the asset id is the file stem.
pub fn load_prices_file(path: &Path) -> Result<PriceSeries> {
    let asset_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_prices(file, &asset_id)
}

/// Loads every `*.csv` in a directory, ordered by asset id.
pub fn load_directory(dir: &Path) -> Result<Vec<PriceSeries>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "csv") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_prices_file(p)).collect()
}

pub fn log_returns(p: &PriceSeries) -> ReturnSeries {
    let returns = p.prices.windows(2).map(|w| w[1].ln() - w[0].ln()).collect();
    ReturnSeries {
        dates: p.dates[1..].to_vec(),
        returns,
    }
}

/// Minimum sizes a train/test split must leave on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub min_train: usize,
    pub min_test: usize,
}

impl SplitPolicy {
    /// `max_horizon + 1` training days and 30 test days.
    pub fn for_horizon(max_horizon: usize) -> Self {
        Self {
            min_train: max_horizon + 1,
            min_test: 30,
        }
    }
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self::for_horizon(50)
    }
}

/// Splits into a training slice covering `[train_start, train_end]` and a
/// test slice holding everything after `train_end`.
pub fn split_by_date(
    r: &ReturnSeries,
    train_start: NaiveDate,
    train_end: NaiveDate,
    policy: SplitPolicy,
) -> Result<(ReturnSeries, ReturnSeries)> {
    if train_start >= train_end {
        return Err(Error::InvalidWindow(format!(
            "train_start {train_start} must precede train_end {train_end}"
        )));
    }
    let (first, last) = match (r.dates.first(), r.dates.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(Error::TooShort {
                needed: 2,
                found: 0,
            })
        }
    };
    if train_start < first || train_end > last {
        return Err(Error::InvalidWindow(format!(
            "[{train_start}, {train_end}] outside series range [{first}, {last}]"
        )));
    }

    let lo = r.dates.partition_point(|d| *d < train_start);
    let hi = r.dates.partition_point(|d| *d <= train_end);
    let train_len = hi - lo;
    let test_len = r.len() - hi;

    if test_len == 0 {
        return Err(Error::EmptyTestRemainder(train_end.to_string()));
    }
    if train_len < policy.min_train {
        return Err(Error::WindowTooShort {
            needed: policy.min_train,
            found: train_len,
        });
    }
    if test_len < policy.min_test {
        return Err(Error::TestTooShort {
            needed: policy.min_test,
            found: test_len,
        });
    }
    Ok((r.slice(lo..hi), r.slice(hi..r.len())))
}
