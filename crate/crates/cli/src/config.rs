//! Run configuration: a TOML file with one table per stage, overridable from
//! the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use tbp_core::market_data::Aggregation;
use tbp_core::portfolio::TbpMode;
use tbp_core::rnn::{CellKind, GridPoint, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub network: NetworkSection,
    pub grid: GridSection,
    pub portfolio: PortfolioSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: PathBuf,
    pub aggregation: Aggregation,
    /// Share of months before the test period.
    pub train_fraction: f64,
    /// Share of the pre-test months held out for validation.
    pub validation_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            aggregation: Aggregation::Last,
            train_fraction: 0.7,
            validation_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            cell: d.cell,
            layers: d.layers,
            hidden: d.hidden,
            dropout: d.dropout,
            seq_len: d.seq_len,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            patience: d.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub dropout: Vec<bool>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            layers: vec![1, 2, 3],
            hidden: vec![8, 16, 32, 64, 128],
            dropout: vec![true, false],
        }
    }
}

impl GridSection {
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &hidden in &self.hidden {
                for &dropout in &self.dropout {
                    out.push(GridPoint {
                        layers,
                        hidden,
                        dropout,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioSection {
    pub mode: TbpMode,
    pub theta_plus: f64,
    pub theta_minus: f64,
    /// Threshold grid as `lo:hi:step` (or a single value).
    pub thetas: String,
    /// Months per frontier point.
    pub window: usize,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self {
            mode: TbpMode::LongOnly,
            theta_plus: 0.01,
            theta_minus: 0.01,
            thetas: "0:0.025:0.0025".into(),
            window: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn network_config(&self) -> NetworkConfig {
        let n = &self.network;
        NetworkConfig {
            cell: n.cell,
            layers: n.layers,
            hidden: n.hidden,
            dropout: n.dropout,
            seq_len: n.seq_len,
            learning_rate: n.learning_rate,
            batch_size: n.batch_size,
            max_epochs: n.max_epochs,
            patience: n.patience,
            seed: self.run.seed,
            ..NetworkConfig::default()
        }
    }

    /// Check every field up front so no stage starts on a bad config.
    pub fn validate(&self) -> anyhow::Result<()> {
        let d = &self.data;
        ensure!(
            d.train_fraction > 0.0 && d.train_fraction < 1.0,
            "data.train_fraction must lie in (0, 1)"
        );
        ensure!(
            (0.0..1.0).contains(&d.validation_fraction),
            "data.validation_fraction must lie in [0, 1)"
        );
        self.network_config()
            .validate()
            .context("invalid [network] section")?;
        let g = &self.grid;
        ensure!(
            !g.layers.is_empty() && !g.hidden.is_empty() && !g.dropout.is_empty(),
            "every [grid] list needs at least one entry"
        );
        ensure!(
            g.layers.iter().chain(&g.hidden).all(|&v| v > 0),
            "[grid] sizes must be positive"
        );
        let p = &self.portfolio;
        for (name, t) in [("theta_plus", p.theta_plus), ("theta_minus", p.theta_minus)] {
            ensure!(
                t.is_finite() && t >= 0.0,
                "portfolio.{name} must be finite and non-negative"
            );
        }
        parse_theta_grid(&p.thetas)?;
        ensure!(p.window >= 2, "portfolio.window must be at least 2");
        Ok(())
    }
}

/// `lo:hi:step` to an inclusive grid, each value rounded to 12 decimals so
/// `0:0.025:0.0025` gives exactly 11 clean thresholds. A bare number is a
/// one-point grid.
pub fn parse_theta_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| -> anyhow::Result<f64> {
        let v: f64 = s
            .parse()
            .with_context(|| format!("bad threshold `{s}` in `{spec}`"))?;
        ensure!(
            v.is_finite() && v >= 0.0,
            "thresholds must be finite and non-negative"
        );
        Ok(v)
    };
    let round = |v: f64| (v * 1e12).round() / 1e12;
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            ensure!(step > 0.0, "threshold step must be positive");
            ensure!(hi >= lo, "threshold grid upper bound below lower bound");
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| round(lo + i as f64 * step)).collect())
        }
        _ => bail!("threshold grid must be `lo:hi:step` or a single value, got `{spec}`"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_eleven_points() {
        let g = parse_theta_grid("0:0.025:0.0025").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[1], 0.0025);
        assert_eq!(g[10], 0.025);
        assert_eq!(parse_theta_grid("0.01").unwrap(), vec![0.01]);
        assert!(parse_theta_grid("0:0.1").is_err());
        assert!(parse_theta_grid("0.1:0:0.01").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<RunConfig>("[network]\nhiden = 3\n").unwrap_err();
        assert!(err.to_string().contains("hiden"));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig =
            toml::from_str("[network]\ncell = \"gru\"\n[run]\nseed = 4\n").unwrap();
        assert_eq!(cfg.network.cell, CellKind::Gru);
        assert_eq!(cfg.network_config().seed, 4);
        assert_eq!(cfg.portfolio.window, 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn default_grid_matches_core() {
        assert_eq!(
            GridSection::default().points(),
            tbp_core::rnn::default_grid()
        );
    }
}
