//! Hourly spot prices, seasonal decomposition and the residual
//! Ornstein-Uhlenbeck model.

mod decompose;
pub(crate) mod ou;
pub mod synthetic;

pub use decompose::{daily_series, decompose, week_bucket, DailyPoint, DailyRule, Decomposition, SeasonalProfile};
pub use ou::{fit_ou, fit_ou_values, simulate_ou, OuFit, OuParams};

use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum PriceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: unparseable timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },
    #[error("row {row}: unparseable price `{value}`")]
    BadPrice { row: usize, value: String },
    #[error("row {row}: price {price} is not positive, log price undefined")]
    NonPositivePrice { row: usize, price: f64 },
    #[error("no price rows")]
    Empty,
    #[error("timestamps not strictly increasing at {0}")]
    NotIncreasing(NaiveDateTime),
    #[error("log price at {0} is not finite")]
    NonFinite(NaiveDateTime),
    #[error("series spans {hours} hours; at least one full week (168 hours) is required")]
    TooShort { hours: i64 },
    #[error("degenerate regression: {0}")]
    Degenerate(String),
    #[error("invalid Ornstein-Uhlenbeck parameters: {0}")]
    InvalidParams(String),
    #[error("day {date}: hour {hour} missing under the fixed-hour rule")]
    MissingHour { date: chrono::NaiveDate, hour: u32 },
}

/// Names of the timestamp and price columns in the input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub timestamp: String,
    pub price: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            price: "price_eur_mwh".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub timestamp: NaiveDateTime,
    pub log_price: f64,
}

/// Hourly log prices, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    entries: Vec<PricePoint>,
    gap_hours: usize,
}

impl PriceSeries {
    pub fn new(entries: Vec<PricePoint>) -> Result<Self, PriceError> {
        if entries.is_empty() {
            return Err(PriceError::Empty);
        }
        let mut gap_hours = 0usize;
        for (k, p) in entries.iter().enumerate() {
            if !p.log_price.is_finite() {
                return Err(PriceError::NonFinite(p.timestamp));
            }
            if k > 0 {
                let dt = p.timestamp - entries[k - 1].timestamp;
                if dt <= TimeDelta::zero() {
                    return Err(PriceError::NotIncreasing(p.timestamp));
                }
                let hours = dt.num_minutes() / 60;
                if hours > 1 {
                    gap_hours += (hours - 1) as usize;
                }
            }
        }
        Ok(Self { entries, gap_hours })
    }

    /// Builds a series from raw (positive) prices.
    pub fn from_prices(rows: &[(NaiveDateTime, f64)]) -> Result<Self, PriceError> {
        let mut entries = Vec::with_capacity(rows.len());
        for (k, &(timestamp, price)) in rows.iter().enumerate() {
            if !(price > 0.0) {
                return Err(PriceError::NonPositivePrice { row: k + 1, price });
            }
            entries.push(PricePoint {
                timestamp,
                log_price: price.ln(),
            });
        }
        entries.sort_by_key(|p| p.timestamp);
        Self::new(entries)
    }

    pub fn entries(&self) -> &[PricePoint] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of missing hours between the first and last timestamp.
    pub fn gap_hours(&self) -> usize {
        self.gap_hours
    }

    pub fn span_hours(&self) -> i64 {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp).num_hours(),
            _ => 0,
        }
    }
}

const TIMESTAMP_FORMATS: &[&str] = &["%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a CSV of hourly prices. Rows are numbered from 1 after the header.
pub fn load_prices(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<PriceSeries, PriceError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| PriceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_prices(file, columns)
}

pub fn read_prices<R: std::io::Read>(reader: R, columns: &ColumnSpec) -> Result<PriceSeries, PriceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PriceError::MissingColumn(name.to_string()))
    };
    let ts_col = col(&columns.timestamp)?;
    let price_col = col(&columns.price)?;
    let mut rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let ts_raw = record.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(ts_raw).ok_or_else(|| PriceError::BadTimestamp {
            row,
            value: ts_raw.to_string(),
        })?;
        let price_raw = record.get(price_col).unwrap_or("");
        let price: f64 = price_raw.parse().map_err(|_| PriceError::BadPrice {
            row,
            value: price_raw.to_string(),
        })?;
        if !(price > 0.0) {
            return Err(PriceError::NonPositivePrice { row, price });
        }
        rows.push(PricePoint {
            timestamp,
            log_price: price.ln(),
        });
    }
    if rows.is_empty() {
        return Err(PriceError::Empty);
    }
    rows.sort_by_key(|p| p.timestamp);
    PriceSeries::new(rows)
}
