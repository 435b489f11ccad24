//! Stage-one and stage-two training loops, baselines and grid search.

mod config;
mod grid;
mod run;

pub use config::TrainConfig;
pub use grid::{
    run_grid, select_teacher, GridSpec, Leaderboard, LeaderboardRow, Method, ALPHA_GRID, BETA_GRID,
    LAMBDA_GRID, LR_GRID, TAU_GRID,
};
pub use run::{
    local_test_auc, student_test_auc, teacher_test_auc, train_fpd, train_jpl, train_local,
    train_teacher, LocalRun, StudentRun,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::fedsim::FedError;
use crate::losses::{LossError, LossReport};
use crate::metrics::MetricError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error("non-finite total loss at step {step}")]
    NonFinite { step: u64, last: Box<Option<LossReport>> },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
