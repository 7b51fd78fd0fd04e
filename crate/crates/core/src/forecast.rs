//! Running a trained model over a panel to get per-month forecast vectors.

use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::evaluation::PredictionRecord;
use crate::market_data::{inference_window, Month, MonthlyFeaturePanel, NUM_FEATURES};
use crate::rnn::{RnnError, RnnModel};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("model expects {model} input features, panel has {panel}")]
    FeatureMismatch { model: usize, panel: usize },
    #[error("month {month} has no full {window}-month input window")]
    InsufficientHistory { month: Month, window: usize },
    #[error("predictions and realized returns are misaligned: {0}")]
    MisalignedPredictions(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

/// Predicted and realized next-month returns for every asset at each
/// decision (anchor) month. Rows are months, columns assets.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPanel {
    assets: Vec<String>,
    months: Vec<Month>,
    predicted: Vec<Vec<f64>>,
    realized: Vec<Vec<f64>>,
}

impl ForecastPanel {
    pub fn new(
        assets: Vec<String>,
        months: Vec<Month>,
        predicted: Vec<Vec<f64>>,
        realized: Vec<Vec<f64>>,
    ) -> Result<Self, ForecastError> {
        let misaligned = |what: String| Err(ForecastError::MisalignedPredictions(what));
        if predicted.len() != months.len() || realized.len() != months.len() {
            return misaligned(format!(
                "{} months, {} prediction rows, {} realized rows",
                months.len(),
                predicted.len(),
                realized.len()
            ));
        }
        for (t, (p, r)) in predicted.iter().zip(&realized).enumerate() {
            if p.len() != assets.len() || r.len() != assets.len() {
                return misaligned(format!("row {t} does not cover {} assets", assets.len()));
            }
            if p.iter().chain(r).any(|v| !v.is_finite()) {
                return misaligned(format!("row {t} has a non-finite value"));
            }
        }
        Ok(Self {
            assets,
            months,
            predicted,
            realized,
        })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    /// Decision months; returns are realized in the month after each.
    pub fn months(&self) -> &[Month] {
        &self.months
    }

    pub fn num_months(&self) -> usize {
        self.months.len()
    }

    pub fn predicted(&self, t: usize) -> &[f64] {
        &self.predicted[t]
    }

    pub fn realized(&self, t: usize) -> &[f64] {
        &self.realized[t]
    }

    /// Flatten into per-(asset, month) records, month-major.
    pub fn records(&self) -> Vec<PredictionRecord> {
        let mut out = Vec::with_capacity(self.months.len() * self.assets.len());
        for (t, month) in self.months.iter().enumerate() {
            for (a, asset) in self.assets.iter().enumerate() {
                out.push(PredictionRecord {
                    asset: asset.clone(),
                    month: *month,
                    predicted: self.predicted[t][a],
                    realized: self.realized[t][a],
                });
            }
        }
        out
    }
}

fn check_features(model: &RnnModel) -> Result<(), ForecastError> {
    let input = model.config().input;
    if input != NUM_FEATURES {
        return Err(ForecastError::FeatureMismatch {
            model: input,
            panel: NUM_FEATURES,
        });
    }
    Ok(())
}

/// Model forecasts for every asset at one anchor month (which need not have
/// a realized target yet).
pub fn predict_month(
    model: &RnnModel,
    panel: &MonthlyFeaturePanel,
    anchor: usize,
) -> Result<Vec<f64>, ForecastError> {
    check_features(model)?;
    let window = model.config().seq_len;
    (0..panel.num_assets())
        .into_par_iter()
        .map(|a| {
            let inputs = inference_window(panel, a, anchor, window).ok_or_else(|| {
                ForecastError::InsufficientHistory {
                    month: panel
                        .months()
                        .get(anchor)
                        .copied()
                        .unwrap_or(Month::new(0, 1)),
                    window,
                }
            })?;
            Ok(model.predict(&inputs)?)
        })
        .collect()
}

/// Forecasts for each anchor in `range` that has both a full input window and
/// a realized target.
pub fn forecast(
    model: &RnnModel,
    panel: &MonthlyFeaturePanel,
    range: Range<usize>,
) -> Result<ForecastPanel, ForecastError> {
    check_features(model)?;
    let window = model.config().seq_len;
    let anchors: Vec<usize> = range
        .filter(|&t| t + 1 >= window && t + 1 < panel.num_months())
        .collect();
    let predicted = anchors
        .iter()
        .map(|&t| predict_month(model, panel, t))
        .collect::<Result<Vec<_>, _>>()?;
    let realized = anchors
        .iter()
        .map(|&t| {
            (0..panel.num_assets())
                .map(|a| panel.target(a, t).expect("anchor has target"))
                .collect()
        })
        .collect();
    let months = anchors.iter().map(|&t| panel.months()[t]).collect();
    ForecastPanel::new(panel.assets().to_vec(), months, predicted, realized)
}
