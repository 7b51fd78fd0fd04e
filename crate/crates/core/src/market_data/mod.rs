//! Daily OHLCV ingestion, monthly aggregation, percent-change feature panels,
//! chronological splits and sliding windows.

mod daily;
mod monthly;
mod panel;
mod split;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use daily::{parse_daily_csv, parse_daily_reader, DailyBar};
pub use monthly::{aggregate_monthly, Aggregation, MonthlyBar};
pub use panel::{build_panel, read_panel_csv, write_panel_csv, MonthlyFeaturePanel};
pub use split::{
    inference_window, make_windows, split_panel, summarize_split, AssetSummary, DatasetSplit,
    WindowedSample,
};

/// Number of per-month attributes (open, high, low, close, volume).
pub const NUM_FEATURES: usize = 5;
/// Index of the adjusted-close change within a feature vector.
pub const CLOSE: usize = 3;
/// Attribute names in feature order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparsable row at line {line}: {reason}")]
    UnparsableRow { line: u64, reason: String },
    #[error("non-positive price at line {line}")]
    NonPositivePrice { line: u64 },
    #[error("duplicate date {0}")]
    DuplicateDate(chrono::NaiveDate),
    #[error("asset `{0}` does not cover the same months as the first asset")]
    MisalignedCalendars(String),
    #[error("asset `{asset}` has a gap in its monthly series after {after}")]
    MonthGap { asset: String, after: Month },
    #[error("need at least {required} months, got {months}")]
    TooFewMonths { months: usize, required: usize },
    #[error("invalid split fractions ({train_frac}, {val_frac_of_train})")]
    InvalidFractions {
        train_frac: f64,
        val_frac_of_train: f64,
    },
    #[error("no assets given")]
    NoAssets,
    #[error("corrupt panel file at line {line}: {reason}")]
    CorruptPanel { line: u64, reason: String },
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Self {
        debug_assert!((1..=12).contains(&month));
        Self { year, month }
    }

    pub fn of(date: chrono::NaiveDate) -> Self {
        use chrono::Datelike;
        Self::new(date.year(), date.month())
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self::new(self.year + 1, 1)
        } else {
            Self::new(self.year, self.month + 1)
        }
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("bad month `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in `{s}`"));
        }
        Ok(Self::new(year, month))
    }
}

impl From<Month> for String {
    fn from(m: Month) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for Month {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

/// `(cur - prev) / prev`. A zero base (only possible for volume) yields 0.
pub(crate) fn pct_change(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        0.0
    } else {
        (cur - prev) / prev
    }
}
