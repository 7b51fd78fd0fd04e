//! Seeded synthetic daily OHLCV universe.
//!
//! Each asset's monthly log return follows an AR(1) around its own drift,
//! `m_t = μ + φ (m_{t-1} - μ) + σ ε_t`, so last month's move carries
//! information about the next one. Each month's log return is spread over
//! its weekdays with zero-sum daily noise, so the month-end adjusted close
//! compounds exactly `m_t`. Opens, highs, lows and volumes are derived from
//! the close path with small seeded perturbations.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::market_data::{DailyBar, Month};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub assets: usize,
    pub months: usize,
    pub start: Month,
    pub seed: u64,
    /// AR(1) coefficient of monthly log returns.
    pub momentum: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            assets: 10,
            months: 240,
            start: Month::new(1997, 1),
            seed: 7,
            momentum: 0.35,
        }
    }
}

pub fn asset_name(i: usize) -> String {
    format!("SYN{i:02}")
}

fn weekdays(month: Month) -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(month.year, month.month, 1).expect("valid month");
    first
        .iter_days()
        .take_while(|d| d.month() == month.month)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn normal(rng: &mut crate::rng::Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Daily bars for every asset, named `SYN00`, `SYN01`, ...
pub fn generate(spec: &FixtureSpec) -> Vec<(String, Vec<DailyBar>)> {
    (0..spec.assets)
        .map(|a| {
            let mut rng = stream(spec.seed, &format!("fixture/{a}"));
            let drift = 0.002 + 0.008 * rng.random::<f64>();
            let sigma = 0.04 + 0.04 * rng.random::<f64>();
            let mut price = 20.0 + 80.0 * rng.random::<f64>();
            let mut monthly = drift;
            let mut month = spec.start;
            let mut bars = Vec::new();
            for _ in 0..spec.months {
                monthly = drift + spec.momentum * (monthly - drift) + sigma * normal(&mut rng);
                let days = weekdays(month);
                let noise: Vec<f64> = days.iter().map(|_| 0.01 * normal(&mut rng)).collect();
                let noise_mean = noise.iter().sum::<f64>() / noise.len() as f64;
                let per_day = monthly / days.len() as f64;
                for (date, e) in days.into_iter().zip(noise) {
                    let prev = price;
                    price *= (per_day + e - noise_mean).exp();
                    let open = prev * (0.003 * normal(&mut rng)).exp();
                    let high = open.max(price) * (0.004 * normal(&mut rng).abs()).exp();
                    let low = open.min(price) * (-0.004 * normal(&mut rng).abs()).exp();
                    let activity = 0.3 * normal(&mut rng) + 20.0 * (price / prev).ln().abs();
                    let volume = (1.0e6 * activity.exp()).round();
                    bars.push(DailyBar {
                        date,
                        open,
                        high,
                        low,
                        adj_close: price,
                        volume,
                    });
                }
                month = month.succ();
            }
            (asset_name(a), bars)
        })
        .collect()
}

/// Write one asset as a `Date,Open,High,Low,Close,Adj Close,Volume` CSV.
pub fn write_daily_csv(bars: &[DailyBar], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "Date,Open,High,Low,Close,Adj Close,Volume")?;
    for b in bars {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            b.date, b.open, b.high, b.low, b.adj_close, b.adj_close, b.volume
        )?;
    }
    Ok(())
}

/// Write `<name>.csv` per asset into `dir`, returning the paths in asset order.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    generate(spec)
        .into_iter()
        .map(|(name, bars)| {
            let path = dir.join(format!("{name}.csv"));
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_daily_csv(&bars, &mut file)?;
            file.flush()?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{aggregate_monthly, parse_daily_reader, Aggregation};

    fn small() -> FixtureSpec {
        FixtureSpec {
            assets: 3,
            months: 24,
            ..FixtureSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()), generate(&small()));
        let other = FixtureSpec { seed: 8, ..small() };
        assert_ne!(generate(&small()), generate(&other));
    }

    #[test]
    fn bars_are_consistent() {
        for (_, bars) in generate(&small()) {
            assert!(bars
                .iter()
                .all(|b| b.low <= b.open.min(b.adj_close) && b.high >= b.open.max(b.adj_close)));
            assert!(bars.iter().all(|b| b.low > 0.0 && b.volume >= 0.0));
            assert!(bars
                .iter()
                .all(|b| !matches!(b.date.weekday(), Weekday::Sat | Weekday::Sun)));
            let monthly = aggregate_monthly(&bars, Aggregation::Last);
            assert_eq!(monthly.len(), 24);
        }
    }

    #[test]
    fn csv_round_trips() {
        let (_, bars) = generate(&small()).remove(0);
        let mut buf = Vec::new();
        write_daily_csv(&bars, &mut buf).unwrap();
        assert_eq!(parse_daily_reader(buf.as_slice()).unwrap(), bars);
    }

    #[test]
    fn monthly_returns_carry_momentum() {
        let spec = FixtureSpec {
            assets: 10,
            months: 240,
            ..FixtureSpec::default()
        };
        let mut pairs = Vec::new();
        for (_, bars) in generate(&spec) {
            let closes: Vec<f64> = aggregate_monthly(&bars, Aggregation::Last)
                .iter()
                .map(|m| m.close)
                .collect();
            let r: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
            let mu = r.iter().sum::<f64>() / r.len() as f64;
            pairs.extend(r.windows(2).map(|w| (w[0] - mu, w[1] - mu)));
        }
        let cov: f64 = pairs.iter().map(|(a, b)| a * b).sum();
        let var: f64 = pairs.iter().map(|(a, _)| a * a).sum();
        let rho = cov / var;
        assert!((0.2..0.5).contains(&rho), "lag-1 autocorrelation {rho}");
    }
}
