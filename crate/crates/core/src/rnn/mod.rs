//! Recurrent forecasters built from scratch: cells, many-to-one networks with
//! inverted dropout and a linear head, exact BPTT gradients, ADAM, training
//! with early stopping, grid search and text checkpoints.

mod adam;
mod cell;
mod checkpoint;
mod matrix;
mod model;
mod train;

use thiserror::Error;

pub use adam::Adam;
pub use cell::{gru_step, lstm_step, srnn_step, step, CellKind, CellParams, CellState, Gate};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ModelCheckpoint,
    TrainingMeta, SCHEMA_VERSION,
};
pub use matrix::Matrix;
pub use model::{loss, ForwardMode, ForwardPass, Gradients, NetworkConfig, RnnModel};
pub use train::{
    default_grid, grid_search, train, EpochRecord, GridEntry, GridPoint, GridSearch, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum RnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RnnError>;
