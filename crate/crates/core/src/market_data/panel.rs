use std::io::{Read, Write};

use super::{pct_change, MarketDataError, Month, MonthlyBar, Result, CLOSE, NUM_FEATURES};

/// Per-asset monthly percent-change features on a shared calendar.
///
/// `features[a][t][k]` is the change of attribute `k` from month `t-1` to
/// month `t` of the underlying bars; the first bar month therefore has no row.
/// The target of `(a, t)` is next month's adjusted-close change, i.e.
/// `features[a][t + 1][CLOSE]`, so the final month has none.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyFeaturePanel {
    assets: Vec<String>,
    months: Vec<Month>,
    features: Vec<Vec<[f64; NUM_FEATURES]>>,
}

impl MonthlyFeaturePanel {
    /// Assemble a panel from precomputed features (asset-major).
    pub fn from_features(
        assets: Vec<String>,
        months: Vec<Month>,
        features: Vec<Vec<[f64; NUM_FEATURES]>>,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Err(MarketDataError::NoAssets);
        }
        if features.len() != assets.len() {
            return Err(MarketDataError::MisalignedCalendars(
                assets.get(features.len()).cloned().unwrap_or_default(),
            ));
        }
        for (asset, rows) in assets.iter().zip(&features) {
            if rows.len() != months.len() {
                return Err(MarketDataError::MisalignedCalendars(asset.clone()));
            }
        }
        if let Some(w) = months.windows(2).find(|w| w[0].succ() != w[1]) {
            return Err(MarketDataError::MonthGap {
                asset: assets[0].clone(),
                after: w[0],
            });
        }
        Ok(Self {
            assets,
            months,
            features,
        })
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn months(&self) -> &[Month] {
        &self.months
    }

    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn num_months(&self) -> usize {
        self.months.len()
    }

    pub fn features(&self, asset: usize) -> &[[f64; NUM_FEATURES]] {
        &self.features[asset]
    }

    pub fn feature(&self, asset: usize, month: usize) -> [f64; NUM_FEATURES] {
        self.features[asset][month]
    }

    /// Next month's adjusted-close change, if month `t` is not the last one.
    pub fn target(&self, asset: usize, t: usize) -> Option<f64> {
        self.features[asset].get(t + 1).map(|row| row[CLOSE])
    }

    /// Number of months that carry a target.
    pub fn num_target_months(&self) -> usize {
        self.months.len().saturating_sub(1)
    }

    pub fn asset_index(&self, id: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == id)
    }
}

/// Build the feature panel from per-asset monthly bars. Every asset must cover
/// exactly the same gap-free month range.
pub fn build_panel(per_asset: &[(String, Vec<MonthlyBar>)]) -> Result<MonthlyFeaturePanel> {
    let (first_id, first) = per_asset.first().ok_or(MarketDataError::NoAssets)?;
    let calendar: Vec<Month> = first.iter().map(|b| b.month).collect();
    if let Some(w) = calendar.windows(2).find(|w| w[0].succ() != w[1]) {
        return Err(MarketDataError::MonthGap {
            asset: first_id.clone(),
            after: w[0],
        });
    }
    if calendar.len() < 2 {
        return Err(MarketDataError::TooFewMonths {
            months: calendar.len(),
            required: 2,
        });
    }

    let mut assets = Vec::with_capacity(per_asset.len());
    let mut features = Vec::with_capacity(per_asset.len());
    for (id, bars) in per_asset {
        if bars.len() != calendar.len() || bars.iter().zip(&calendar).any(|(b, m)| b.month != *m) {
            return Err(MarketDataError::MisalignedCalendars(id.clone()));
        }
        let rows = bars
            .windows(2)
            .map(|w| {
                let (prev, cur) = (w[0].values(), w[1].values());
                std::array::from_fn(|k| pct_change(prev[k], cur[k]))
            })
            .collect();
        assets.push(id.clone());
        features.push(rows);
    }
    MonthlyFeaturePanel::from_features(assets, calendar[1..].to_vec(), features)
}

/// Header of the panel CSV.
pub const PANEL_HEADER: &str = "asset,month,f_open,f_high,f_low,f_close,f_volume,target";

/// Write the panel as `asset,month,f_open,f_high,f_low,f_close,f_volume,target`,
/// asset-major, with an empty target on each asset's final month. Floats use
/// the shortest representation that parses back to the same value.
pub fn write_panel_csv(panel: &MonthlyFeaturePanel, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{PANEL_HEADER}")?;
    for (a, asset) in panel.assets.iter().enumerate() {
        for (t, month) in panel.months.iter().enumerate() {
            let f = panel.features[a][t];
            write!(out, "{asset},{month}")?;
            for v in f {
                write!(out, ",{v}")?;
            }
            match panel.target(a, t) {
                Some(y) => writeln!(out, ",{y}")?,
                None => writeln!(out, ",")?,
            }
        }
    }
    Ok(())
}

pub fn read_panel_csv(reader: impl Read) -> Result<MonthlyFeaturePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let corrupt = |line: u64, reason: String| MarketDataError::CorruptPanel { line, reason };
    let headers = rdr.headers().map_err(|e| corrupt(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != PANEL_HEADER {
        return Err(corrupt(1, "unexpected header".into()));
    }

    let mut assets: Vec<String> = Vec::new();
    let mut months_per_asset: Vec<Vec<Month>> = Vec::new();
    let mut features: Vec<Vec<[f64; NUM_FEATURES]>> = Vec::new();
    let mut targets: Vec<Vec<Option<f64>>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| corrupt(0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 8 {
            return Err(corrupt(
                line,
                format!("expected 8 fields, got {}", record.len()),
            ));
        }
        let asset = &record[0];
        let month: Month = record[1].parse().map_err(|e| corrupt(line, e))?;
        let mut row = [0.0; NUM_FEATURES];
        for (k, v) in row.iter_mut().enumerate() {
            *v = record[2 + k]
                .parse()
                .map_err(|_| corrupt(line, format!("bad number `{}`", &record[2 + k])))?;
        }
        let target = match &record[7] {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|_| corrupt(line, format!("bad target `{s}`")))?,
            ),
        };
        if assets.last().map(String::as_str) != Some(asset) {
            if assets.iter().any(|a| a == asset) {
                return Err(corrupt(
                    line,
                    format!("asset `{asset}` rows are not contiguous"),
                ));
            }
            assets.push(asset.to_string());
            months_per_asset.push(Vec::new());
            features.push(Vec::new());
            targets.push(Vec::new());
        }
        months_per_asset.last_mut().unwrap().push(month);
        features.last_mut().unwrap().push(row);
        targets.last_mut().unwrap().push(target);
    }

    let months = months_per_asset.first().cloned().unwrap_or_default();
    for (asset, m) in assets.iter().zip(&months_per_asset) {
        if *m != months {
            return Err(MarketDataError::MisalignedCalendars(asset.clone()));
        }
    }
    let panel = MonthlyFeaturePanel::from_features(assets, months, features)?;
    for (a, ts) in targets.iter().enumerate() {
        for (t, stored) in ts.iter().enumerate() {
            if *stored != panel.target(a, t) {
                return Err(corrupt(
                    0,
                    format!(
                        "target of {} {} disagrees with next close",
                        panel.assets[a], panel.months[t]
                    ),
                ));
            }
        }
    }
    Ok(panel)
}
