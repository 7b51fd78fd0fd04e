//! Threshold-based portfolios (TBPs): selection, equal weighting and a
//! frictionless monthly-rebalancing backtest.
//!
//! At each decision month the selector picks assets from the one-month-ahead
//! forecasts, every member gets `|w| = 1/P`, the portfolio is held over the
//! following month and the accumulated wealth is split equally again at the
//! next decision. An empty selection sits in cash at zero return.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::ForecastPanel;
use crate::market_data::Month;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum PortfolioError {
    #[error("thresholds must be finite and non-negative (got {theta_plus}, {theta_minus})")]
    InvalidThreshold { theta_plus: f64, theta_minus: f64 },
    #[error("no realized return for asset index {0}")]
    MissingReturn(usize),
    #[error("return {value} below -1 at position {index}")]
    ReturnBelowMinusOne { index: usize, value: f64 },
    #[error("selector refers to asset {0}, outside the universe")]
    UnknownAsset(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TbpMode {
    #[serde(rename = "long")]
    LongOnly,
    #[serde(rename = "short")]
    ShortOnly,
    #[serde(rename = "long-short")]
    LongShort,
}

impl TbpMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LongOnly => "long",
            Self::ShortOnly => "short",
            Self::LongShort => "long-short",
        }
    }
}

impl fmt::Display for TbpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TbpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "long" | "long-only" => Ok(Self::LongOnly),
            "short" | "short-only" => Ok(Self::ShortOnly),
            "long-short" | "longshort" => Ok(Self::LongShort),
            _ => Err(format!(
                "unknown mode `{s}` (expected long|short|long-short)"
            )),
        }
    }
}

/// Selection rule: long `r̂ >= θ⁺`, short `r̂ < -θ⁻`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbpConfig {
    pub mode: TbpMode,
    pub theta_plus: f64,
    pub theta_minus: f64,
}

impl TbpConfig {
    pub fn new(mode: TbpMode, theta_plus: f64, theta_minus: f64) -> Result<Self, PortfolioError> {
        let ok = |t: f64| t.is_finite() && t >= 0.0;
        if !ok(theta_plus) || !ok(theta_minus) {
            return Err(PortfolioError::InvalidThreshold {
                theta_plus,
                theta_minus,
            });
        }
        Ok(Self {
            mode,
            theta_plus,
            theta_minus,
        })
    }

    pub fn long(theta_plus: f64) -> Result<Self, PortfolioError> {
        Self::new(TbpMode::LongOnly, theta_plus, 0.0)
    }

    /// Same config with both thresholds replaced by `theta`.
    pub fn with_theta(self, theta: f64) -> Result<Self, PortfolioError> {
        Self::new(self.mode, theta, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Position {
    Long,
    Short,
}

/// Members of a TBP, ascending by asset index. The long–short portfolio is the
/// union of the long and short legs.
pub fn select_tbp(predictions: &[f64], config: &TbpConfig) -> Vec<(usize, Position)> {
    let long = matches!(config.mode, TbpMode::LongOnly | TbpMode::LongShort);
    let short = matches!(config.mode, TbpMode::ShortOnly | TbpMode::LongShort);
    predictions
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| {
            if long && r >= config.theta_plus {
                Some((i, Position::Long))
            } else if short && r < -config.theta_minus {
                Some((i, Position::Short))
            } else {
                None
            }
        })
        .collect()
}

/// How a backtest picks its holdings each month.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// Every asset long: the equally weighted portfolio (EWP).
    All,
    /// A single asset held long throughout.
    Asset(usize),
    Threshold(TbpConfig),
}

impl Selector {
    pub fn select(&self, predictions: &[f64]) -> Result<Vec<(usize, Position)>, PortfolioError> {
        match *self {
            Self::All => Ok((0..predictions.len())
                .map(|i| (i, Position::Long))
                .collect()),
            Self::Asset(i) if i < predictions.len() => Ok(vec![(i, Position::Long)]),
            Self::Asset(i) => Err(PortfolioError::UnknownAsset(i)),
            Self::Threshold(cfg) => Ok(select_tbp(predictions, &cfg)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub asset: usize,
    /// Signed; `|weight| = 1/P`.
    pub weight: f64,
}

/// Holdings decided at `month` and held over the following month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSnapshot {
    pub month: Month,
    pub members: Vec<Holding>,
    pub cash_weight: f64,
}

/// Equal absolute weights `1/P` with the position sign; empty means all cash.
pub fn assign_weights(month: Month, members: &[(usize, Position)]) -> PortfolioSnapshot {
    if members.is_empty() {
        return PortfolioSnapshot {
            month,
            members: Vec::new(),
            cash_weight: 1.0,
        };
    }
    let w = 1.0 / members.len() as f64;
    let members = members
        .iter()
        .map(|&(asset, pos)| Holding {
            asset,
            weight: match pos {
                Position::Long => w,
                Position::Short => -w,
            },
        })
        .collect();
    PortfolioSnapshot {
        month,
        members,
        cash_weight: 0.0,
    }
}

/// `Σ w_i r_i`; cash earns nothing and shorts earn `-r` through their weight.
pub fn portfolio_return(
    snapshot: &PortfolioSnapshot,
    realized: &[f64],
) -> Result<f64, PortfolioError> {
    snapshot.members.iter().try_fold(0.0, |acc, h| {
        let r = realized
            .get(h.asset)
            .copied()
            .filter(|r| r.is_finite())
            .ok_or(PortfolioError::MissingReturn(h.asset))?;
        Ok(acc + h.weight * r)
    })
}

/// `R_t = Π (1 + r_i)`, i.e. wealth from `W_0 = 1`; an empty path gives 1.
pub fn cumulative_return(returns: &[f64]) -> Result<f64, PortfolioError> {
    if let Some((index, &value)) = returns.iter().enumerate().find(|(_, &r)| r < -1.0) {
        return Err(PortfolioError::ReturnBelowMinusOne { index, value });
    }
    Ok(returns.iter().map(|r| 1.0 + r).product())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub snapshots: Vec<PortfolioSnapshot>,
    /// Realized portfolio return over the month after each snapshot.
    pub returns: Vec<f64>,
    /// Wealth after each month, starting from 1.
    pub wealth: Vec<f64>,
}

/// Mean, population SD and their ratio of monthly returns, plus the mean
/// number of holdings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub mean: f64,
    pub sd: f64,
    /// `None` when the SD is zero.
    pub mean_over_sd: Option<f64>,
    pub average_assets: f64,
}

impl BacktestResult {
    pub fn final_wealth(&self) -> f64 {
        self.wealth.last().copied().unwrap_or(1.0)
    }

    pub fn stats(&self) -> PerformanceStats {
        performance_stats(self)
    }
}

pub fn performance_stats(result: &BacktestResult) -> PerformanceStats {
    let mean = stats::mean(&result.returns).unwrap_or(0.0);
    let sd = stats::population_std(&result.returns).unwrap_or(0.0);
    let counts: Vec<f64> = result
        .snapshots
        .iter()
        .map(|s| s.members.len() as f64)
        .collect();
    PerformanceStats {
        mean,
        sd,
        mean_over_sd: (sd > 0.0).then(|| mean / sd),
        average_assets: stats::mean(&counts).unwrap_or(0.0),
    }
}

impl fmt::Display for PerformanceStats {
    /// Report style: `mean / SD / mean÷SD / average assets`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratio = self
            .mean_over_sd
            .map_or_else(|| "NA".into(), |r| format!("{r:.3}"));
        write!(
            f,
            "{:.3} / {:.3} / {ratio} / {:.3}",
            self.mean, self.sd, self.average_assets
        )
    }
}

/// Rebalance monthly over every decision month of `forecasts`.
pub fn backtest(
    forecasts: &ForecastPanel,
    selector: &Selector,
) -> Result<BacktestResult, PortfolioError> {
    let mut snapshots = Vec::with_capacity(forecasts.num_months());
    let mut returns = Vec::with_capacity(forecasts.num_months());
    let mut wealth = Vec::with_capacity(forecasts.num_months());
    let mut w = 1.0;
    for (t, &month) in forecasts.months().iter().enumerate() {
        let members = selector.select(forecasts.predicted(t))?;
        let snapshot = assign_weights(month, &members);
        let r = portfolio_return(&snapshot, forecasts.realized(t))?;
        if r < -1.0 {
            return Err(PortfolioError::ReturnBelowMinusOne { index: t, value: r });
        }
        w *= 1.0 + r;
        snapshots.push(snapshot);
        returns.push(r);
        wealth.push(w);
    }
    Ok(BacktestResult {
        snapshots,
        returns,
        wealth,
    })
}

/// Equally weighted portfolio of the whole universe, computed directly from
/// realized returns rather than through a selector.
pub fn ewp_backtest(forecasts: &ForecastPanel) -> Result<BacktestResult, PortfolioError> {
    let n = forecasts.assets().len();
    let mut result = BacktestResult {
        snapshots: Vec::new(),
        returns: Vec::new(),
        wealth: Vec::new(),
    };
    let mut w = 1.0;
    for (t, &month) in forecasts.months().iter().enumerate() {
        let realized = forecasts.realized(t);
        let r = if n == 0 {
            0.0
        } else {
            realized.iter().sum::<f64>() / n as f64
        };
        if r < -1.0 {
            return Err(PortfolioError::ReturnBelowMinusOne { index: t, value: r });
        }
        w *= 1.0 + r;
        let members = (0..n)
            .map(|asset| Holding {
                asset,
                weight: 1.0 / n as f64,
            })
            .collect();
        result.snapshots.push(PortfolioSnapshot {
            month,
            members,
            cash_weight: if n == 0 { 1.0 } else { 0.0 },
        });
        result.returns.push(r);
        result.wealth.push(w);
    }
    Ok(result)
}

/// `month,members,cash_weight,return,wealth`, one row per holding month.
/// Members are `;`-separated asset ids, shorts prefixed with `-`.
pub fn write_backtest_csv(
    result: &BacktestResult,
    assets: &[String],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "month,members,cash_weight,return,wealth")?;
    for ((snap, r), w) in result
        .snapshots
        .iter()
        .zip(&result.returns)
        .zip(&result.wealth)
    {
        let members: Vec<String> = snap
            .members
            .iter()
            .map(|h| {
                let id = assets.get(h.asset).map_or("?", String::as_str);
                if h.weight < 0.0 {
                    format!("-{id}")
                } else {
                    id.to_string()
                }
            })
            .collect();
        writeln!(
            out,
            "{},{},{},{r},{w}",
            snap.month.succ(),
            members.join(";"),
            snap.cash_weight
        )?;
    }
    Ok(())
}

/// `portfolio,threshold,mean,sd,mean_sd,average_assets`; `NA` marks an
/// undefined ratio or a portfolio without a threshold.
pub fn write_stats_csv(
    rows: &[(String, Option<f64>, PerformanceStats)],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "portfolio,threshold,mean,sd,mean_sd,average_assets")?;
    for (name, theta, s) in rows {
        let theta = theta.map_or_else(|| "NA".into(), |t| t.to_string());
        let ratio = s
            .mean_over_sd
            .map_or_else(|| "NA".into(), |r| r.to_string());
        writeln!(
            out,
            "{name},{theta},{},{},{ratio},{}",
            s.mean, s.sd, s.average_assets
        )?;
    }
    Ok(())
}
