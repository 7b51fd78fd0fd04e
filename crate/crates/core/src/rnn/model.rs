use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::cell::{backward_layer, forward_layer, StepCache};
use super::{CellKind, CellParams, Matrix, Result, RnnError};
use crate::rng;

/// Topology and training hyperparameters of a forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub cell: CellKind,
    /// Stacked recurrent layers; layer `k` feeds its hidden vectors to `k + 1`.
    pub layers: usize,
    /// Hidden units per layer.
    pub hidden: usize,
    /// Features per time step.
    pub input: usize,
    /// Dropout rate on the last layer's final hidden vector, in `[0, 1)`.
    pub dropout: f64,
    pub seq_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Lstm,
            layers: 1,
            hidden: 36,
            input: crate::market_data::NUM_FEATURES,
            dropout: 0.5,
            seq_len: 36,
            learning_rate: 0.001,
            batch_size: 20,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(RnnError::InvalidConfig(msg.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.hidden == 0 || self.input == 0 || self.seq_len == 0 {
            return bad("hidden, input and seq_len must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Parameter count of a model built from this config.
    pub fn param_count(&self) -> usize {
        (0..self.layers)
            .map(|l| {
                self.cell
                    .param_count(self.hidden, if l == 0 { self.input } else { self.hidden })
            })
            .sum::<usize>()
            + self.hidden
            + 1
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Many-to-one recurrent regressor: stacked cells, dropout on the final hidden
/// vector, then `r̂ = w_out · h + b_out`.
#[derive(Debug, Clone)]
pub struct RnnModel {
    config: NetworkConfig,
    layers: Vec<CellParams>,
    head_w: Vec<f64>,
    head_b: f64,
    /// Identifies the current parameter values; forward caches record it.
    version: u64,
}

impl PartialEq for RnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.layers == other.layers
            && self.head_w == other.head_w
            && self.head_b.to_bits() == other.head_b.to_bits()
    }
}

/// Whether a forward pass samples a dropout mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Infer,
    /// Inverted dropout: units kept with probability `1 - rate` and scaled by
    /// `1 / (1 - rate)`; the mask is a pure function of `mask_seed`.
    Train {
        mask_seed: u64,
    },
}

/// Prediction plus everything [`RnnModel::backward`] needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    prediction: f64,
    caches: Vec<Vec<StepCache>>,
    h_last: Vec<f64>,
    mask: Vec<f64>,
    version: u64,
}

impl ForwardPass {
    pub fn prediction(&self) -> f64 {
        self.prediction
    }

    /// Final hidden vector of the top layer, before dropout.
    pub fn final_hidden(&self) -> &[f64] {
        &self.h_last
    }

    pub fn mask(&self) -> &[f64] {
        &self.mask
    }
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<CellParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Gradients {
    pub fn zeros_like(model: &RnnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| CellParams::zeros(l.kind, l.hidden(), l.input()))
                .collect(),
            head_w: vec![0.0; model.head_w.len()],
            head_b: 0.0,
        }
    }

    /// Same order as [`RnnModel::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(CellParams::slices).collect();
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
        for (a, b) in self.head_w.iter_mut().zip(&other.head_w) {
            *a += b;
        }
        self.head_b += other.head_b;
    }
}

/// Quadratic loss `½ Σ_b (r_b - r̂_b)²` over a batch.
pub fn loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(RnnError::LengthMismatch {
            left: preds.len(),
            right: targets.len(),
        });
    }
    Ok(0.5
        * preds
            .iter()
            .zip(targets)
            .map(|(p, t)| (t - p) * (t - p))
            .sum::<f64>())
}

impl RnnModel {
    /// Randomly initialised model; the draw depends only on `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, "init");
        let layers = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.input } else { config.hidden };
                CellParams::init(config.cell, config.hidden, input, &mut r)
            })
            .collect();
        let limit = (6.0 / (config.hidden + 1) as f64).sqrt();
        let head_w = (0..config.hidden)
            .map(|_| r.random_range(-limit..=limit))
            .collect();
        Ok(Self {
            config,
            layers,
            head_w,
            head_b: 0.0,
            version: fresh_version(),
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| {
                let input = if l == 0 { config.input } else { config.hidden };
                CellParams::zeros(config.cell, config.hidden, input)
            })
            .collect();
        let head_w = vec![0.0; config.hidden];
        Ok(Self {
            config,
            layers,
            head_w,
            head_b: 0.0,
            version: fresh_version(),
        })
    }

    /// Assemble a model from explicit parameters.
    pub fn from_parts(
        config: NetworkConfig,
        layers: Vec<CellParams>,
        head_w: Vec<f64>,
        head_b: f64,
    ) -> Result<Self> {
        config.validate()?;
        let shape_ok = layers.len() == config.layers
            && head_w.len() == config.hidden
            && layers.iter().enumerate().all(|(l, p)| {
                let input = if l == 0 { config.input } else { config.hidden };
                p.kind == config.cell
                    && p.gates.len() == config.cell.num_gates()
                    && p.gates.iter().all(|g| {
                        g.w.shape() == (config.hidden, input)
                            && g.u.shape() == (config.hidden, config.hidden)
                            && g.b.len() == config.hidden
                    })
            });
        if !shape_ok {
            return Err(RnnError::ShapeMismatch(
                "parameters do not match config".into(),
            ));
        }
        Ok(Self {
            config,
            layers,
            head_w,
            head_b,
            version: fresh_version(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[CellParams] {
        &self.layers
    }

    pub fn head(&self) -> (&[f64], f64) {
        (&self.head_w, self.head_b)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(CellParams::param_count)
            .sum::<usize>()
            + self.head_w.len()
            + 1
    }

    /// Parameter slices in canonical order: layers (gates `W`, `U`, `b`),
    /// then `w_out`, then `b_out`.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(CellParams::slices).collect();
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.version = fresh_version();
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(CellParams::slices_mut)
            .collect();
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn forward(&self, inputs: &Matrix, mode: ForwardMode) -> Result<ForwardPass> {
        let (steps, width) = inputs.shape();
        if steps != self.config.seq_len || width != self.config.input {
            return Err(RnnError::ShapeMismatch(format!(
                "window must be {}x{}, got {steps}x{width}",
                self.config.seq_len, self.config.input
            )));
        }
        let mut seq: Vec<Vec<f64>> = (0..steps).map(|t| inputs.row(t).to_vec()).collect();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (hs, cache) = forward_layer(layer, &seq)?;
            caches.push(cache);
            seq = hs;
        }
        let h_last = seq.pop().expect("seq_len >= 1");
        let mask = self.dropout_mask(mode);
        let prediction = self.head_b
            + self
                .head_w
                .iter()
                .zip(&h_last)
                .zip(&mask)
                .map(|((w, h), m)| w * (h * m))
                .sum::<f64>();
        Ok(ForwardPass {
            prediction,
            caches,
            h_last,
            mask,
            version: self.version,
        })
    }

    fn dropout_mask(&self, mode: ForwardMode) -> Vec<f64> {
        let n = self.config.hidden;
        match mode {
            ForwardMode::Train { mask_seed } if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let scale = 1.0 / keep;
                let mut r = rng::Rng::seed_from_u64(mask_seed);
                (0..n)
                    .map(|_| if r.random::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            }
            _ => vec![1.0; n],
        }
    }

    /// Inference-mode prediction for one window.
    pub fn predict(&self, inputs: &Matrix) -> Result<f64> {
        Ok(self.forward(inputs, ForwardMode::Infer)?.prediction)
    }

    /// Exact gradient of `½ Σ (r_b - r̂_b)²` over the batch whose forward
    /// passes are given, by full backpropagation through time.
    pub fn backward(&self, passes: &[ForwardPass], targets: &[f64]) -> Result<Gradients> {
        if passes.len() != targets.len() {
            return Err(RnnError::LengthMismatch {
                left: passes.len(),
                right: targets.len(),
            });
        }
        let mut total = Gradients::zeros_like(self);
        for (pass, &target) in passes.iter().zip(targets) {
            total.add_assign(&self.backward_one(pass, target)?);
        }
        Ok(total)
    }

    /// Gradient of `½ (r - r̂)²` for one forward pass.
    pub fn backward_one(&self, pass: &ForwardPass, target: f64) -> Result<Gradients> {
        if pass.version != self.version || pass.caches.len() != self.layers.len() {
            return Err(RnnError::StaleCache);
        }
        let residual = pass.prediction - target;
        let mut grads = Gradients::zeros_like(self);
        grads.head_b = residual;
        for ((g, h), m) in grads.head_w.iter_mut().zip(&pass.h_last).zip(&pass.mask) {
            *g = residual * h * m;
        }
        let dh_top: Vec<f64> = self
            .head_w
            .iter()
            .zip(&pass.mask)
            .map(|(w, m)| residual * w * m)
            .collect();

        let steps = self.config.seq_len;
        let mut dh_out = vec![vec![0.0; self.config.hidden]; steps];
        dh_out[steps - 1] = dh_top;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (layer_grads, dx) = backward_layer(layer, &pass.caches[l], &dh_out);
            grads.layers[l] = layer_grads;
            dh_out = dx;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cell: CellKind) -> NetworkConfig {
        NetworkConfig {
            cell,
            hidden: 4,
            input: 3,
            seq_len: 6,
            dropout: 0.5,
            ..Default::default()
        }
    }

    fn window(seed: u64, cfg: &NetworkConfig) -> Matrix {
        let mut r = rng::stream(seed, "window");
        let data = (0..cfg.seq_len * cfg.input)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(cfg.seq_len, cfg.input, data).unwrap()
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = RnnModel::zeros(small(CellKind::Gru)).unwrap();
        assert_eq!(m.predict(&window(1, m.config())).unwrap(), 0.0);
    }

    #[test]
    fn infer_and_seeded_train_are_deterministic() {
        let m = RnnModel::new(small(CellKind::Lstm)).unwrap();
        let x = window(2, m.config());
        assert_eq!(
            m.predict(&x).unwrap().to_bits(),
            m.predict(&x).unwrap().to_bits()
        );
        let a = m.forward(&x, ForwardMode::Train { mask_seed: 9 }).unwrap();
        let b = m.forward(&x, ForwardMode::Train { mask_seed: 9 }).unwrap();
        assert_eq!(a.mask(), b.mask());
        assert_eq!(a.prediction().to_bits(), b.prediction().to_bits());
        assert!(a.mask().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn wrong_window_shape() {
        let m = RnnModel::new(small(CellKind::Srnn)).unwrap();
        assert!(matches!(
            m.predict(&Matrix::zeros(5, 3)),
            Err(RnnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn loss_values() {
        assert_eq!(loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(loss(&[0.0], &[2.0]).unwrap(), 2.0);
        assert!(matches!(
            loss(&[0.0], &[]),
            Err(RnnError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let m = RnnModel::new(small(CellKind::Gru)).unwrap();
        let x = window(4, m.config());
        let pass = m.forward(&x, ForwardMode::Infer).unwrap();
        let target = pass.prediction();
        let g = m.backward(&[pass], &[target]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_bias_gradient_is_residual_sum() {
        let m = RnnModel::new(small(CellKind::Lstm)).unwrap();
        let passes: Vec<_> = (0..3)
            .map(|s| {
                m.forward(&window(s, m.config()), ForwardMode::Infer)
                    .unwrap()
            })
            .collect();
        let targets = [0.1, -0.3, 0.7];
        let expected: f64 = passes
            .iter()
            .zip(targets)
            .map(|(p, t)| p.prediction() - t)
            .sum();
        let g = m.backward(&passes, &targets).unwrap();
        assert!((g.head_b - expected).abs() < 1e-15);
    }

    #[test]
    fn stale_cache_detected() {
        let mut m = RnnModel::new(small(CellKind::Srnn)).unwrap();
        let pass = m
            .forward(&window(0, m.config()), ForwardMode::Infer)
            .unwrap();
        m.param_slices_mut()[0][0] += 1.0;
        assert!(matches!(
            m.backward(&[pass], &[0.0]),
            Err(RnnError::StaleCache)
        ));
    }

    #[test]
    fn param_count_matches_config() {
        for cell in CellKind::ALL {
            let cfg = NetworkConfig {
                cell,
                layers: 2,
                hidden: 5,
                ..Default::default()
            };
            let m = RnnModel::new(cfg.clone()).unwrap();
            assert_eq!(m.param_count(), cfg.param_count());
            let counted: usize = m.param_slices().iter().map(|s| s.len()).sum();
            assert_eq!(counted, m.param_count());
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            NetworkConfig {
                layers: 0,
                ..Default::default()
            },
            NetworkConfig {
                dropout: 1.0,
                ..Default::default()
            },
            NetworkConfig {
                batch_size: 0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                RnnModel::new(cfg),
                Err(RnnError::InvalidConfig(_))
            ));
        }
    }
}
