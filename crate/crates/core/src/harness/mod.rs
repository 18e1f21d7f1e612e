//! Training loop, validation, ablation grids, run logs and checkpoints.

mod ablation;
pub mod checkpoint;
mod config;
mod runlog;
mod train;
mod validate;

use std::io;

use thiserror::Error;

use crate::data::DataError;
use crate::depth::DepthError;
use crate::losses::LossError;
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::tensor::TensorError;

pub use ablation::{
    median, multi_task, preset_cells, regression_only, run_ablation, run_cells, sample_std, AblationAxis, AblationCell,
    AblationTable, CellResult,
};
pub use config::{ExperimentConfig, LrConfig, MANUAL_WEIGHTS};
pub use runlog::{IterRow, RunLog, ValRow, TRAIN_COLUMNS, VAL_COLUMNS};
pub use train::{train, Trainer};
pub use validate::{argmax_channels, validate, DepthPredictor, HeadPredictions, ValidationScores};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("checkpoint holds {field} = {checkpoint} but the requested config has {requested}")]
    ConfigConflict {
        field: String,
        checkpoint: String,
        requested: String,
    },
    #[error("non-finite loss or gradient at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },
    #[error("validation set has no ground truth")]
    EmptyValidation,
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Depth(#[from] DepthError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}
