use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{MarketDataError, Month, MonthlyFeaturePanel, Result, NUM_FEATURES};
use crate::rnn::Matrix;
use crate::stats::Summary;

/// Contiguous, disjoint, chronological month-index ranges of a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split: `test = floor((1 - train_frac) * months)`, then
/// `validation = floor(val_frac_of_train * remaining)`; the remainder is
/// training data. Nothing is shuffled.
pub fn split_panel(
    panel: &MonthlyFeaturePanel,
    train_frac: f64,
    val_frac_of_train: f64,
    window_len: usize,
) -> Result<DatasetSplit> {
    split_months(
        panel.num_months(),
        train_frac,
        val_frac_of_train,
        window_len,
    )
}

pub(crate) fn split_months(
    months: usize,
    train_frac: f64,
    val_frac_of_train: f64,
    window_len: usize,
) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&train_frac) || !(0.0..=1.0).contains(&val_frac_of_train) {
        return Err(MarketDataError::InvalidFractions {
            train_frac,
            val_frac_of_train,
        });
    }
    let required = window_len + 3;
    if months < required {
        return Err(MarketDataError::TooFewMonths { months, required });
    }
    // The epsilon absorbs representation error such as 0.3 * 70 = 20.999...
    let floor = |x: f64| (x + 1e-9).floor() as usize;
    let test = floor((1.0 - train_frac) * months as f64).min(months);
    let pre_test = months - test;
    let validation = floor(val_frac_of_train * pre_test as f64).min(pre_test);
    let train = pre_test - validation;
    Ok(DatasetSplit {
        train: 0..train,
        validation: train..pre_test,
        test: pre_test..months,
    })
}

/// One many-to-one training example: `window_len` consecutive feature rows
/// ending at the anchor month, and the anchor's next-month close change.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub asset: usize,
    pub anchor: usize,
    pub anchor_month: Month,
    /// `window_len x NUM_FEATURES`, oldest row first.
    pub inputs: Matrix,
    pub target: f64,
}

/// Inputs for the window ending at `anchor`, or `None` without enough history.
pub fn inference_window(
    panel: &MonthlyFeaturePanel,
    asset: usize,
    anchor: usize,
    window_len: usize,
) -> Option<Matrix> {
    if window_len == 0 || anchor + 1 < window_len || anchor >= panel.num_months() {
        return None;
    }
    let rows = &panel.features(asset)[anchor + 1 - window_len..=anchor];
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(Matrix::from_vec(window_len, NUM_FEATURES, data).expect("row-major window"))
}

/// Every `(anchor, asset)` sample whose anchor lies in `range`, has a full
/// window of history (possibly reaching into earlier splits) and a defined
/// target. Ordered by anchor month, then asset.
pub fn make_windows(
    panel: &MonthlyFeaturePanel,
    range: Range<usize>,
    window_len: usize,
) -> Vec<WindowedSample> {
    let mut out = Vec::new();
    for anchor in range {
        for asset in 0..panel.num_assets() {
            let Some(target) = panel.target(asset, anchor) else {
                continue;
            };
            let Some(inputs) = inference_window(panel, asset, anchor, window_len) else {
                continue;
            };
            out.push(WindowedSample {
                asset,
                anchor,
                anchor_month: panel.months()[anchor],
                inputs,
                target,
            });
        }
    }
    out
}

/// Population statistics of each feature for one asset over a month range.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSummary {
    pub asset: String,
    pub features: [Summary; NUM_FEATURES],
}

pub fn summarize_split(panel: &MonthlyFeaturePanel, range: Range<usize>) -> Vec<AssetSummary> {
    if range.is_empty() {
        return Vec::new();
    }
    (0..panel.num_assets())
        .map(|a| {
            let rows = &panel.features(a)[range.clone()];
            let features = std::array::from_fn(|k| {
                let column: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                Summary::of(&column).expect("non-empty range")
            });
            AssetSummary {
                asset: panel.assets()[a].clone(),
                features,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::CLOSE;

    fn panel(assets: usize, months: usize) -> MonthlyFeaturePanel {
        let mut month = Month::new(2000, 1);
        let calendar: Vec<Month> = (0..months)
            .map(|_| {
                let m = month;
                month = month.succ();
                m
            })
            .collect();
        let features = (0..assets)
            .map(|a| {
                (0..months)
                    .map(|t| {
                        let v = (a * 1000 + t) as f64 * 1e-3;
                        [v, v, v, v, v]
                    })
                    .collect()
            })
            .collect();
        MonthlyFeaturePanel::from_features(
            (0..assets).map(|a| format!("A{a}")).collect(),
            calendar,
            features,
        )
        .unwrap()
    }

    #[test]
    fn hundred_months_split_49_21_30() {
        let s = split_months(100, 0.7, 0.3, 36).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (49, 21, 30)
        );
        assert!(s.train.end <= s.validation.start && s.validation.end <= s.test.start);
    }

    #[test]
    fn ten_months_too_few() {
        assert!(matches!(
            split_months(10, 0.7, 0.3, 36),
            Err(MarketDataError::TooFewMonths {
                months: 10,
                required: 39
            })
        ));
    }

    #[test]
    fn all_train_boundary() {
        let s = split_months(50, 1.0, 0.0, 36).unwrap();
        assert_eq!(s.train, 0..50);
        assert!(s.validation.is_empty() && s.test.is_empty());
    }

    #[test]
    fn one_anchor_month_gives_one_sample_per_asset() {
        let p = panel(10, 60);
        let samples = make_windows(&p, 40..41, 36);
        assert_eq!(samples.len(), 10);
        assert!(samples.iter().all(|s| s.anchor == 40));
    }

    #[test]
    fn anchor_35_uses_months_0_to_35() {
        let p = panel(1, 60);
        let s = &make_windows(&p, 35..36, 36)[0];
        assert_eq!(s.inputs.rows(), 36);
        assert_eq!(s.inputs.get(0, 0), p.feature(0, 0)[0]);
        assert_eq!(s.inputs.get(35, CLOSE), p.feature(0, 35)[CLOSE]);
        assert_eq!(s.target, p.feature(0, 36)[CLOSE]);
    }

    #[test]
    fn short_history_and_last_month_skipped() {
        let p = panel(2, 60);
        assert!(make_windows(&p, 10..11, 36).is_empty());
        assert!(make_windows(&p, 59..60, 36).is_empty());
        assert!(inference_window(&p, 0, 59, 36).is_some());
    }

    #[test]
    fn summary_of_constant_and_plus_minus_one() {
        let months: Vec<Month> = vec![Month::new(2000, 1), Month::new(2000, 2)];
        let p = MonthlyFeaturePanel::from_features(
            vec!["A".into()],
            months,
            vec![vec![[-1.0, 2.0, 0.0, 0.0, 0.0], [1.0, 2.0, 0.0, 0.0, 0.0]]],
        )
        .unwrap();
        let s = &summarize_split(&p, 0..2)[0];
        assert_eq!(s.features[0].mean, 0.0);
        assert_eq!(s.features[0].std, 1.0);
        assert_eq!(s.features[1].std, 0.0);
    }
}
