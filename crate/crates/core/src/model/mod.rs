//! Convolutional social pooling encoder–decoder and its single-mode,
//! fully-connected-pooling and no-pooling variants.

mod config;
mod csp;
mod distribution;
mod social;

pub use config::{ModelConfig, ModelMode, SocialKind};
pub use csp::{gaussian_from_raw, CspModel, SIGMA_RAW_LIMIT};
pub use distribution::{
    maneuver_index, maneuvers, BivariateGaussian, Component, GaussianParamSequence, ManeuverDistribution,
    PredictiveDistribution, MANEUVER_COUNT,
};
pub use social::{
    build_social_tensor, cell_number, ego_lane_rows, grid_index, occupancy, NeighborState, SocialTensor, CENTER_ROW,
    EGO_LANE_COL, GRID_CELLS, GRID_COLS, GRID_REACH_FT, GRID_ROWS, ROW_FT,
};

use thiserror::Error;

use crate::data::PredictionInstance;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] csp_tensor::TensorError),
}

/// Anything that maps prediction instances to predictive distributions.
pub trait Predictor {
    fn name(&self) -> String;

    fn predict_batch(&self, instances: &[PredictionInstance]) -> crate::Result<Vec<PredictiveDistribution>>;
}
