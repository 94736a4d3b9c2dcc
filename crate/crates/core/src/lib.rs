//! Trajectory forecasting with convolutional social pooling: data
//! ingestion, a traffic simulator, the learned models and baselines,
//! training, evaluation and the end-to-end pipeline.

pub mod baseline;
pub mod config;
pub mod data;
pub mod heatmap;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Baseline(#[from] baseline::BaselineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Mask(#[from] mask::MaskError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
