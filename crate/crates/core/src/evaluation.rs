//! Forecast scoring: hit ratio and threshold-conditional accuracy.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::Month;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no prediction records")]
    EmptyRecords,
}

/// A one-month-ahead forecast made at `month` and the return realized over
/// the following month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub asset: String,
    pub month: Month,
    pub predicted: f64,
    pub realized: f64,
}

/// Fraction of records whose predicted and realized returns have the same
/// strict sign (`predicted * realized > 0`); a zero on either side is a miss.
pub fn hit_ratio(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let hits = records
        .iter()
        .filter(|r| r.predicted * r.realized > 0.0)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Hit ratio per asset, in order of first appearance.
pub fn hit_ratios_by_asset(records: &[PredictionRecord]) -> Vec<(String, f64)> {
    let mut assets: Vec<&str> = Vec::new();
    for r in records {
        if !assets.contains(&r.asset.as_str()) {
            assets.push(&r.asset);
        }
    }
    assets
        .into_iter()
        .map(|a| {
            let own: Vec<PredictionRecord> =
                records.iter().filter(|r| r.asset == a).cloned().collect();
            (a.to_string(), hit_ratio(&own).expect("asset has records"))
        })
        .collect()
}

/// Mean and population SD of per-asset hit ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRatioSummary {
    pub mean: f64,
    pub sd: f64,
}

impl HitRatioSummary {
    /// `None` when there are no ratios.
    pub fn of(ratios: &[f64]) -> Option<Self> {
        Some(Self {
            mean: stats::mean(ratios)?,
            sd: stats::population_std(ratios)?,
        })
    }
}

impl std::fmt::Display for HitRatioSummary {
    /// Report style, e.g. `0.604, 0.042`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}, {:.3}", self.mean, self.sd)
    }
}

/// One row of the threshold-conditional accuracy table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub theta: f64,
    /// Records with `predicted >= theta`.
    pub n_total: usize,
    /// Of those, records with `realized > 0`.
    pub n_correct: usize,
    /// `None` when `n_total == 0`.
    pub accuracy: Option<f64>,
}

/// For each threshold, how many pooled forecasts clear it and how many of
/// those were followed by a positive realized return. Thresholds are
/// evaluated independently; with an ascending grid `n_total` never increases.
pub fn threshold_accuracy(records: &[PredictionRecord], thetas: &[f64]) -> Vec<AccuracyRow> {
    thetas
        .iter()
        .map(|&theta| {
            let picked = records.iter().filter(|r| r.predicted >= theta);
            let (n_total, n_correct) = picked.fold((0, 0), |(t, c), r| {
                (t + 1, c + usize::from(r.realized > 0.0))
            });
            let accuracy = (n_total > 0).then(|| n_correct as f64 / n_total as f64);
            AccuracyRow {
                theta,
                n_total,
                n_correct,
                accuracy,
            }
        })
        .collect()
}

/// `asset,hit_ratio` rows followed by `mean` and `sd` summary rows.
pub fn write_hit_ratio_csv(
    per_asset: &[(String, f64)],
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "asset,hit_ratio")?;
    for (asset, ratio) in per_asset {
        writeln!(out, "{asset},{ratio}")?;
    }
    let ratios: Vec<f64> = per_asset.iter().map(|(_, r)| *r).collect();
    if let Some(s) = HitRatioSummary::of(&ratios) {
        writeln!(out, "mean,{}", s.mean)?;
        writeln!(out, "sd,{}", s.sd)?;
    }
    Ok(())
}

/// `theta,n_correct,n_total,accuracy`; an undefined accuracy is written `NA`.
pub fn write_accuracy_csv(rows: &[AccuracyRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "theta,n_correct,n_total,accuracy")?;
    for r in rows {
        let acc = r
            .accuracy
            .map_or_else(|| "NA".to_string(), |a| a.to_string());
        writeln!(out, "{},{},{},{}", r.theta, r.n_correct, r.n_total, acc)?;
    }
    Ok(())
}
