//! Python bindings: panels, models, scoring, portfolio selection and
//! frontier fitting from `tbp-core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tbp_core::evaluation::{self, PredictionRecord};
use tbp_core::fixture::{write_fixture, FixtureSpec};
use tbp_core::forecast::{forecast, ForecastPanel};
use tbp_core::frontier::{self, CubicFit as CoreFit};
use tbp_core::market_data::{
    aggregate_monthly, build_panel, make_windows, parse_daily_csv, read_panel_csv, split_panel,
    Aggregation, Month, MonthlyFeaturePanel, NUM_FEATURES,
};
use tbp_core::portfolio::{self, Position, Selector, TbpConfig, TbpMode};
use tbp_core::rnn::{
    self, CellKind, Matrix, ModelCheckpoint, NetworkConfig, RnnModel, TrainingMeta,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn months(start: Month, n: usize) -> Vec<Month> {
    std::iter::successors(Some(start), |m| Some(m.succ()))
        .take(n)
        .collect()
}

/// Monthly feature panel (percent changes of OHLCV per asset and month).
#[pyclass(frozen)]
struct Panel {
    inner: MonthlyFeaturePanel,
}

#[pymethods]
impl Panel {
    /// Build from a directory of daily CSVs, one per asset.
    #[staticmethod]
    #[pyo3(signature = (directory, aggregation = "last"))]
    fn from_daily_dir(directory: PathBuf, aggregation: &str) -> PyResult<Self> {
        let agg: Aggregation = aggregation.parse().map_err(value_err)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&directory)
            .map_err(|e| PyIOError::new_err(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut monthly = Vec::new();
        for path in files {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let daily = parse_daily_csv(&path).map_err(value_err)?;
            monthly.push((name, aggregate_monthly(&daily, agg)));
        }
        Ok(Self {
            inner: build_panel(&monthly).map_err(value_err)?,
        })
    }

    /// Load a panel CSV written by `tbp ingest`.
    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let file = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self {
            inner: read_panel_csv(std::io::BufReader::new(file)).map_err(value_err)?,
        })
    }

    #[getter]
    fn assets(&self) -> Vec<String> {
        self.inner.assets().to_vec()
    }

    #[getter]
    fn months(&self) -> Vec<String> {
        self.inner
            .months()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    fn features(&self, asset: usize) -> PyResult<Vec<[f64; NUM_FEATURES]>> {
        if asset >= self.inner.num_assets() {
            return Err(value_err(format!("asset index {asset} out of range")));
        }
        Ok(self.inner.features(asset).to_vec())
    }

    /// Next month's close return, or None for the last month.
    fn target(&self, asset: usize, month: usize) -> Option<f64> {
        (asset < self.inner.num_assets())
            .then(|| self.inner.target(asset, month))
            .flatten()
    }

    /// Chronological split as `{"train": (start, end), ...}` month ranges.
    #[pyo3(signature = (train_fraction = 0.7, validation_fraction = 0.3, window = 36))]
    fn split<'py>(
        &self,
        py: Python<'py>,
        train_fraction: f64,
        validation_fraction: f64,
        window: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let s = split_panel(&self.inner, train_fraction, validation_fraction, window)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("train", (s.train.start, s.train.end))?;
        d.set_item("validation", (s.validation.start, s.validation.end))?;
        d.set_item("test", (s.test.start, s.test.end))?;
        Ok(d)
    }

    fn __len__(&self) -> usize {
        self.inner.num_months()
    }
}

/// Recurrent forecaster (S-RNN, LSTM or GRU) with a linear head.
#[pyclass]
struct Model {
    inner: RnnModel,
    meta: TrainingMeta,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (cell = "lstm", layers = 1, hidden = 36, seq_len = 36, dropout = 0.5,
                        learning_rate = 0.001, batch_size = 20, max_epochs = 200, patience = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        cell: &str,
        layers: usize,
        hidden: usize,
        seq_len: usize,
        dropout: f64,
        learning_rate: f64,
        batch_size: usize,
        max_epochs: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cell: CellKind = cell.parse().map_err(value_err)?;
        let cfg = NetworkConfig {
            cell,
            layers,
            hidden,
            seq_len,
            dropout,
            learning_rate,
            batch_size,
            max_epochs,
            patience,
            seed,
            ..NetworkConfig::default()
        };
        Ok(Self {
            inner: RnnModel::new(cfg).map_err(value_err)?,
            meta: TrainingMeta::default(),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = rnn::load_checkpoint(path).map_err(value_err)?;
        Ok(Self {
            inner: ckpt.model,
            meta: ckpt.meta,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = ModelCheckpoint {
            model: self.inner.clone(),
            meta: self.meta,
        };
        rnn::save_checkpoint(&ckpt, path).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn cell(&self) -> String {
        self.inner.config().cell.to_string()
    }

    #[getter]
    fn seq_len(&self) -> usize {
        self.inner.config().seq_len
    }

    /// Forecast for one `seq_len x 5` window (oldest row first).
    fn predict(&self, window: Vec<Vec<f64>>) -> PyResult<f64> {
        let m =
            Matrix::from_rows(&window).ok_or_else(|| value_err("window rows differ in length"))?;
        self.inner.predict(&m).map_err(value_err)
    }

    /// Train on the panel's `train` months, early-stopping on `validation`.
    /// Returns the per-epoch history as `(epoch, train_loss, val_loss)`.
    fn fit(
        &mut self,
        py: Python<'_>,
        panel: &Panel,
        train: (usize, usize),
        validation: (usize, usize),
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let window = self.inner.config().seq_len;
        let train_set = make_windows(&panel.inner, train.0..train.1, window);
        let val_set = make_windows(&panel.inner, validation.0..validation.1, window);
        let model = self.inner.clone();
        let outcome = py
            .detach(move || rnn::train(model, &train_set, &val_set))
            .map_err(value_err)?;
        self.meta = TrainingMeta {
            epochs_run: outcome.epochs_run(),
            best_epoch: outcome.best_epoch,
            best_val_loss: outcome.best_val_loss,
        };
        self.inner = outcome.model;
        Ok(outcome
            .history
            .iter()
            .map(|r| (r.epoch, r.train_loss, r.val_loss))
            .collect())
    }

    /// `(asset, month, predicted, realized)` for every forecastable month in
    /// `[start, end)`.
    fn forecast(
        &self,
        panel: &Panel,
        start: usize,
        end: usize,
    ) -> PyResult<Vec<(String, String, f64, f64)>> {
        let fp = forecast(&self.inner, &panel.inner, start..end).map_err(value_err)?;
        Ok(fp
            .records()
            .into_iter()
            .map(|r| (r.asset, r.month.to_string(), r.predicted, r.realized))
            .collect())
    }
}

fn records(predicted: &[f64], realized: &[f64]) -> PyResult<Vec<PredictionRecord>> {
    if predicted.len() != realized.len() {
        return Err(value_err("predicted and realized lengths differ"));
    }
    Ok(predicted
        .iter()
        .zip(realized)
        .map(|(&p, &r)| PredictionRecord {
            asset: String::new(),
            month: Month::new(2000, 1),
            predicted: p,
            realized: r,
        })
        .collect())
}

/// Share of pairs with the same strict sign.
#[pyfunction]
fn hit_ratio(predicted: Vec<f64>, realized: Vec<f64>) -> PyResult<f64> {
    evaluation::hit_ratio(&records(&predicted, &realized)?).map_err(value_err)
}

/// `(theta, n_correct, n_total, accuracy)`.
type AccuracyRow = (f64, usize, usize, Option<f64>);

/// One row per threshold.
#[pyfunction]
fn threshold_accuracy(
    predicted: Vec<f64>,
    realized: Vec<f64>,
    thetas: Vec<f64>,
) -> PyResult<Vec<AccuracyRow>> {
    let rows = evaluation::threshold_accuracy(&records(&predicted, &realized)?, &thetas);
    Ok(rows
        .into_iter()
        .map(|r| (r.theta, r.n_correct, r.n_total, r.accuracy))
        .collect())
}

fn tbp_config(mode: &str, theta_plus: f64, theta_minus: f64) -> PyResult<TbpConfig> {
    let mode: TbpMode = mode.parse().map_err(value_err)?;
    TbpConfig::new(mode, theta_plus, theta_minus).map_err(value_err)
}

/// Members as `(index, "long" | "short")`.
#[pyfunction]
#[pyo3(signature = (predictions, theta_plus, theta_minus = 0.0, mode = "long"))]
fn select_tbp(
    predictions: Vec<f64>,
    theta_plus: f64,
    theta_minus: f64,
    mode: &str,
) -> PyResult<Vec<(usize, &'static str)>> {
    let cfg = tbp_config(mode, theta_plus, theta_minus)?;
    Ok(portfolio::select_tbp(&predictions, &cfg)
        .into_iter()
        .map(|(i, p)| (i, if p == Position::Long { "long" } else { "short" }))
        .collect())
}

/// Product of `1 + r`; 1.0 for an empty path.
#[pyfunction]
fn cumulative_return(returns: Vec<f64>) -> PyResult<f64> {
    portfolio::cumulative_return(&returns).map_err(value_err)
}

/// Monthly-rebalanced backtest of predicted/realized matrices
/// (rows are months, columns assets). `theta_plus=None` holds every asset.
#[pyfunction]
#[pyo3(signature = (predicted, realized, theta_plus = None, theta_minus = 0.0, mode = "long"))]
fn backtest<'py>(
    py: Python<'py>,
    predicted: Vec<Vec<f64>>,
    realized: Vec<Vec<f64>>,
    theta_plus: Option<f64>,
    theta_minus: f64,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let n = predicted.first().map_or(0, Vec::len);
    let fp = ForecastPanel::new(
        (0..n).map(|i| i.to_string()).collect(),
        months(Month::new(2000, 1), predicted.len()),
        predicted,
        realized,
    )
    .map_err(value_err)?;
    let selector = match theta_plus {
        None => Selector::All,
        Some(t) => Selector::Threshold(tbp_config(mode, t, theta_minus)?),
    };
    let result = portfolio::backtest(&fp, &selector).map_err(value_err)?;
    let stats = result.stats();
    let d = PyDict::new(py);
    d.set_item("returns", result.returns.clone())?;
    d.set_item("wealth", result.wealth.clone())?;
    d.set_item(
        "members",
        result
            .snapshots
            .iter()
            .map(|s| s.members.len())
            .collect::<Vec<_>>(),
    )?;
    d.set_item("mean", stats.mean)?;
    d.set_item("sd", stats.sd)?;
    d.set_item("mean_over_sd", stats.mean_over_sd)?;
    d.set_item("average_assets", stats.average_assets)?;
    Ok(d)
}

/// Least-squares cubic `y = c0 + c1 x + c2 x^2 + c3 x^3`.
#[pyclass(frozen)]
struct CubicFit {
    inner: CoreFit,
}

#[pymethods]
impl CubicFit {
    #[getter]
    fn coeffs(&self) -> [f64; 4] {
        self.inner.coeffs
    }

    #[getter]
    fn residual_rms(&self) -> f64 {
        self.inner.residual_rms
    }

    #[getter]
    fn domain(&self) -> (f64, f64) {
        self.inner.domain
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn __repr__(&self) -> String {
        let [a, b, c, d] = self.inner.coeffs;
        format!(
            "CubicFit(coeffs=[{a}, {b}, {c}, {d}], residual_rms={})",
            self.inner.residual_rms
        )
    }
}

#[pyfunction]
fn fit_cubic(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<CubicFit> {
    if xs.len() != ys.len() {
        return Err(value_err("xs and ys lengths differ"));
    }
    Ok(CubicFit {
        inner: frontier::fit_cubic_xy(&xs, &ys).map_err(value_err)?,
    })
}

/// Write the synthetic daily universe; returns the file paths.
#[pyfunction]
#[pyo3(signature = (directory, assets = 10, months = 240, seed = 7))]
fn generate_fixture(
    directory: PathBuf,
    assets: usize,
    months: usize,
    seed: u64,
) -> PyResult<Vec<PathBuf>> {
    let spec = FixtureSpec {
        assets,
        months,
        seed,
        ..FixtureSpec::default()
    };
    write_fixture(&directory, &spec).map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pymodule]
fn tbp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<Model>()?;
    m.add_class::<CubicFit>()?;
    m.add_function(wrap_pyfunction!(hit_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(select_tbp, m)?)?;
    m.add_function(wrap_pyfunction!(cumulative_return, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cubic, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    Ok(())
}
