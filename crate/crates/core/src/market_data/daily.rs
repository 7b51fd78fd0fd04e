use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use super::{MarketDataError, Result};

/// One trading day. `adj_close` stands in for the close everywhere downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub adj_close: f64,
    pub volume: f64,
}

const DATE: &str = "Date";
const OPEN: &str = "Open";
const HIGH: &str = "High";
const LOW: &str = "Low";
const ADJ_CLOSE: &str = "Adj Close";
const VOLUME: &str = "Volume";

/// Parse a Yahoo-Finance style daily export
/// (`Date,Open,High,Low,Close,Adj Close,Volume`). The raw `Close` column is
/// ignored. Rows come back sorted by date.
pub fn parse_daily_csv(path: impl AsRef<Path>) -> Result<Vec<DailyBar>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_daily_reader(file)
}

pub fn parse_daily_reader(reader: impl Read) -> Result<Vec<DailyBar>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| MarketDataError::UnparsableRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MarketDataError::MissingColumn(name.to_string()))
    };
    let idx_date = column(DATE)?;
    let idx_open = column(OPEN)?;
    let idx_high = column(HIGH)?;
    let idx_low = column(LOW)?;
    let idx_adj = column(ADJ_CLOSE)?;
    let idx_vol = column(VOLUME)?;

    let mut bars = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| MarketDataError::UnparsableRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = |idx: usize| {
            record
                .get(idx)
                .ok_or_else(|| MarketDataError::UnparsableRow {
                    line,
                    reason: format!("missing field {}", idx + 1),
                })
        };
        let number = |idx: usize| -> Result<f64> {
            let raw = field(idx)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MarketDataError::UnparsableRow {
                    line,
                    reason: format!("`{raw}` is not a number"),
                })
        };
        let raw_date = field(idx_date)?;
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| {
            MarketDataError::UnparsableRow {
                line,
                reason: format!("bad date `{raw_date}`"),
            }
        })?;
        let (open, high, low, adj_close) = (
            number(idx_open)?,
            number(idx_high)?,
            number(idx_low)?,
            number(idx_adj)?,
        );
        let volume = number(idx_vol)?;
        if volume < 0.0 {
            return Err(MarketDataError::UnparsableRow {
                line,
                reason: format!("negative volume {volume}"),
            });
        }
        if [open, high, low, adj_close].iter().any(|&p| p <= 0.0) {
            return Err(MarketDataError::NonPositivePrice { line });
        }
        bars.push(DailyBar {
            date,
            open,
            high,
            low,
            adj_close,
            volume,
        });
    }

    bars.sort_by_key(|b| b.date);
    if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
        return Err(MarketDataError::DuplicateDate(w[0].date));
    }
    Ok(bars)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Date,Open,High,Low,Close,Adj Close,Volume\n";

    fn parse(body: &str) -> Result<Vec<DailyBar>> {
        parse_daily_reader(format!("{HEADER}{body}").as_bytes())
    }

    #[test]
    fn two_rows_in_date_order() {
        let bars = parse("2000-01-04,2,3,1,2.5,2.4,100\n2000-01-03,1,2,1,1.5,1.4,0\n").unwrap();
        assert_eq!(bars.len(), 2);
        assert!(bars[0].date < bars[1].date);
        assert_eq!(bars[0].adj_close, 1.4);
        assert_eq!(bars[0].volume, 0.0);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn negative_volume_is_unparsable() {
        let err = parse("2000-01-03,1,2,1,1.5,1.4,-5\n").unwrap_err();
        assert!(
            matches!(err, MarketDataError::UnparsableRow { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn non_positive_price_reports_line() {
        let err = parse("2000-01-03,1,2,1,1.5,1.4,5\n2000-01-04,0,2,1,1.5,1.4,5\n").unwrap_err();
        assert!(
            matches!(err, MarketDataError::NonPositivePrice { line: 3 }),
            "{err}"
        );
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_daily_reader("Date,Open,High,Low,Close,Volume\n".as_bytes()).unwrap_err();
        match err {
            MarketDataError::MissingColumn(c) => assert_eq!(c, "Adj Close"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_dates_rejected() {
        let err = parse("2000-01-03,1,2,1,1.5,1.4,5\n2000-01-03,1,2,1,1.5,1.4,5\n").unwrap_err();
        assert!(matches!(err, MarketDataError::DuplicateDate(_)));
    }

    #[test]
    fn yahoo_null_rows_are_unparsable() {
        let err = parse("2000-01-03,null,null,null,null,null,null\n").unwrap_err();
        assert!(matches!(err, MarketDataError::UnparsableRow { .. }));
    }
}
