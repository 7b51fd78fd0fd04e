use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, ForwardMode, Gradients, NetworkConfig, Result, RnnError, RnnModel};
use crate::market_data::WindowedSample;
use crate::rng;

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample `½ (r - r̂)²` over the epoch's training passes.
    pub train_loss: f64,
    /// Mean per-sample `½ (r - r̂)²` on the validation set in inference mode
    /// (equals `train_loss` when there is no validation data).
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: RnnModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

fn mean_half_squared_error(model: &RnnModel, samples: &[WindowedSample]) -> Result<f64> {
    let errors = samples
        .par_iter()
        .map(|s| {
            model
                .predict(&s.inputs)
                .map(|p| 0.5 * (s.target - p) * (s.target - p))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / samples.len() as f64)
}

/// Mini-batch ADAM training with seeded shuffling, seeded dropout masks and
/// early stopping on validation loss.
///
/// Each epoch shuffles the training samples, walks them in batches of
/// `batch_size` (the last batch may be short) and applies one ADAM update per
/// batch to the summed batch gradient. Training stops after `max_epochs`, or
/// once `patience` consecutive epochs fail to improve the best validation loss
/// (with `patience = 0` the first non-improving epoch stops it).
pub fn train(
    model: RnnModel,
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(RnnError::EmptyTrainSet);
    }
    let cfg = model.config().clone();
    let mut model = model;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (model.clone(), f64::INFINITY, 0usize);
    let mut stale_epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng::stream(
            cfg.seed,
            &format!("train/shuffle/{epoch}"),
        ));
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let sample = &train_set[idx];
                    let mask_seed = rng::derive_seed(
                        cfg.seed,
                        &format!("train/dropout/{epoch}/{}", batch_no * cfg.batch_size + pos),
                    );
                    let pass = model.forward(&sample.inputs, ForwardMode::Train { mask_seed })?;
                    let err = pass.prediction() - sample.target;
                    Ok((0.5 * err * err, model.backward_one(&pass, sample.target)?))
                })
                .collect::<Result<Vec<(f64, Gradients)>>>()?;
            let mut grads = Gradients::zeros_like(&model);
            for (l, g) in &per_sample {
                epoch_loss += l;
                grads.add_assign(g);
            }
            opt.step_slices(model.param_slices_mut(), grads.slices());
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_half_squared_error(&model, val_set)?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(RnnError::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best.1 {
            best = (model.clone(), val_loss, epoch);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    let (model, best_val_loss, best_epoch) = best;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_loss,
    })
}

/// One candidate topology of the hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub layers: usize,
    pub hidden: usize,
    /// Use the base config's dropout rate (`true`) or none.
    pub dropout: bool,
}

/// Layers {1, 2, 3} x units {8, 16, 32, 64, 128} x dropout {on, off}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::with_capacity(30);
    for layers in [1, 2, 3] {
        for hidden in [8, 16, 32, 64, 128] {
            for dropout in [true, false] {
                grid.push(GridPoint {
                    layers,
                    hidden,
                    dropout,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub point: GridPoint,
    pub config: NetworkConfig,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    /// In grid order.
    pub entries: Vec<GridEntry>,
    /// Index of the winning entry.
    pub best: usize,
}

impl GridSearch {
    pub fn best(&self) -> &GridEntry {
        &self.entries[self.best]
    }
}

/// Train every grid point on the same data and pick the lowest validation
/// loss. Ties prefer fewer layers, then fewer units, then dropout on, then
/// grid order. Each point trains with a seed derived from the base seed and
/// its grid index, so the result does not depend on scheduling.
pub fn grid_search(
    base: &NetworkConfig,
    grid: &[GridPoint],
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(RnnError::InvalidConfig("empty grid".into()));
    }
    let dropout_rate = if base.dropout > 0.0 {
        base.dropout
    } else {
        0.5
    };
    let entries = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &point)| {
            let config = NetworkConfig {
                layers: point.layers,
                hidden: point.hidden,
                dropout: if point.dropout { dropout_rate } else { 0.0 },
                seed: rng::derive_seed(base.seed, &format!("grid/{idx}")),
                ..base.clone()
            };
            let outcome = train(RnnModel::new(config.clone())?, train_set, val_set)?;
            Ok(GridEntry {
                point,
                config,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let best = pick_best(&entries);
    Ok(GridSearch { entries, best })
}

/// Lowest validation loss; ties prefer fewer layers, fewer units, dropout on,
/// then earlier grid position.
pub(crate) fn pick_best(entries: &[GridEntry]) -> usize {
    (0..entries.len())
        .min_by(|&a, &b| {
            let (ea, eb) = (&entries[a], &entries[b]);
            ea.outcome
                .best_val_loss
                .total_cmp(&eb.outcome.best_val_loss)
                .then(ea.point.layers.cmp(&eb.point.layers))
                .then(ea.point.hidden.cmp(&eb.point.hidden))
                .then(eb.point.dropout.cmp(&ea.point.dropout))
                .then(a.cmp(&b))
        })
        .expect("non-empty grid")
}
