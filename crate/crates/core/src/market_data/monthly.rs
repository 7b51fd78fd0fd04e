use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DailyBar, Month};

/// How daily values inside a calendar month collapse to one monthly value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Values of the final trading day.
    Last,
    Mean,
    Max,
    Min,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [Self::Last, Self::Mean, Self::Max, Self::Min];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Last => "last",
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Min => "min",
        }
    }

    fn apply(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Self::Last => values.last().expect("month has at least one bar"),
            Self::Mean => {
                let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                sum / n as f64
            }
            Self::Max => values.fold(f64::NEG_INFINITY, f64::max),
            Self::Min => values.fold(f64::INFINITY, f64::min),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "last" => Ok(Self::Last),
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            _ => Err(format!(
                "unknown aggregation `{s}` (expected last|mean|max|min)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonthlyBar {
    pub month: Month,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    /// Aggregated adjusted close.
    pub close: f64,
    pub volume: f64,
    pub aggregation: Aggregation,
}

impl MonthlyBar {
    pub fn values(&self) -> [f64; super::NUM_FEATURES] {
        [self.open, self.high, self.low, self.close, self.volume]
    }
}

/// Collapse sorted daily bars into one bar per calendar month, applying
/// `method` attribute-wise. Months without trading days are absent.
pub fn aggregate_monthly(bars: &[DailyBar], method: Aggregation) -> Vec<MonthlyBar> {
    bars.chunk_by(|a, b| Month::of(a.date) == Month::of(b.date))
        .map(|days| MonthlyBar {
            month: Month::of(days[0].date),
            open: method.apply(days.iter().map(|d| d.open)),
            high: method.apply(days.iter().map(|d| d.high)),
            low: method.apply(days.iter().map(|d| d.low)),
            close: method.apply(days.iter().map(|d| d.adj_close)),
            volume: method.apply(days.iter().map(|d| d.volume)),
            aggregation: method,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn day(y: i32, m: u32, d: u32, close: f64) -> DailyBar {
        DailyBar {
            date: NaiveDate::from_ymd_opt(y, m, d).unwrap(),
            open: close - 1.0,
            high: close + 1.0,
            low: close - 2.0,
            adj_close: close,
            volume: close * 10.0,
        }
    }

    #[test]
    fn singleton_month_is_identity_for_every_method() {
        let bars = [day(2001, 3, 5, 12.0)];
        for method in Aggregation::ALL {
            let m = aggregate_monthly(&bars, method);
            assert_eq!(m.len(), 1);
            assert_eq!(m[0].values(), [11.0, 13.0, 10.0, 12.0, 120.0]);
        }
    }

    #[test]
    fn closes_10_20_30() {
        let bars = [
            day(2001, 3, 1, 10.0),
            day(2001, 3, 2, 20.0),
            day(2001, 3, 5, 30.0),
        ];
        let close = |m| aggregate_monthly(&bars, m)[0].close;
        assert_eq!(close(Aggregation::Mean), 20.0);
        assert_eq!(close(Aggregation::Max), 30.0);
        assert_eq!(close(Aggregation::Min), 10.0);
        assert_eq!(close(Aggregation::Last), 30.0);
    }

    #[test]
    fn two_months_two_bars_in_order() {
        let bars = [
            day(2001, 3, 1, 10.0),
            day(2001, 3, 30, 11.0),
            day(2001, 4, 2, 12.0),
        ];
        let m = aggregate_monthly(&bars, Aggregation::Last);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].month, Month::new(2001, 3));
        assert_eq!(m[1].month, Month::new(2001, 4));
        assert_eq!(m[0].close, 11.0);
    }

    #[test]
    fn parse_aggregation() {
        assert_eq!("MEAN".parse::<Aggregation>().unwrap(), Aggregation::Mean);
        assert!("median".parse::<Aggregation>().is_err());
    }
}
