//! Training, evaluation, cross-validation, reports, and the command line.

mod adam;
pub mod cli;
mod config;
mod report;
mod train;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use config::TrainConfig;
pub use report::{curves_csv, mean_std, EpochRecord, FoldReport, RunReport, Summary, REPORT_FORMAT_VERSION};
pub use train::{
    apply_downsample, batch_gradient, cross_validate, evaluate, fit, mix_seed, predict, prepare_inputs, train,
    train_holdout, Fitted, GRAD_CHUNK,
};

use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore};
use crate::dataset::DatasetError;
use crate::metrics::MetricError;
use crate::model::{Model, ModelConfig, ModelError};
use crate::spectral::SpectralError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(String),
    #[error("training diverged (non-finite loss or parameters) at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Saves parameters with the model and training configuration as metadata.
pub fn save_model(path: &Path, model: &Model, cfg: &TrainConfig) -> Result<(), HarnessError> {
    let meta = json!({ "model": model.config, "train": cfg });
    Ok(model.params.save_json(path, Some(meta))?)
}

pub fn load_model(path: &Path) -> Result<(Model, Option<TrainConfig>), HarnessError> {
    let (params, meta): (ParamStore, _) = ParamStore::load_json(path)?;
    let meta = meta.ok_or_else(|| HarnessError::Contract(format!("{} has no model metadata", path.display())))?;
    let config: ModelConfig = serde_json::from_value(meta["model"].clone())
        .map_err(|e| HarnessError::Contract(format!("{}: bad model metadata: {e}", path.display())))?;
    let train = serde_json::from_value(meta["train"].clone()).ok();
    Ok((Model::from_params(config, params)?, train))
}
