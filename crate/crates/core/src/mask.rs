//! Grid-masking generalization experiment: train without ego-lane
//! neighbors in one row parity, test on the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DatasetSplit, PredictionInstance};
use crate::model::ego_lane_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn matches(self, row: usize) -> bool {
        (row % 2 == 1) == (self == Parity::Odd)
    }

    pub fn other(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

/// Rows count 0 (rear) to 12 (front). Training drops instances with an
/// ego-lane neighbor in a `train_excluded` row; testing drops the other parity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub train_excluded: Parity,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { train_excluded: Parity::Odd }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("masked {0} set is empty; generate a larger dataset")]
    Empty(&'static str),
}

fn has_ego_lane_row(inst: &PredictionInstance, parity: Parity) -> bool {
    ego_lane_rows(&inst.neighbors).into_iter().any(|r| parity.matches(r))
}

pub fn keep_in_train(inst: &PredictionInstance, cfg: &MaskConfig) -> bool {
    !has_ego_lane_row(inst, cfg.train_excluded)
}

pub fn keep_in_test(inst: &PredictionInstance, cfg: &MaskConfig) -> bool {
    !has_ego_lane_row(inst, cfg.train_excluded.other())
}

/// Filters both sides of a split.
pub fn mask_split(split: &DatasetSplit, cfg: &MaskConfig) -> Result<DatasetSplit, MaskError> {
    let train: Vec<_> = split.train.iter().filter(|i| keep_in_train(i, cfg)).cloned().collect();
    let test: Vec<_> = split.test.iter().filter(|i| keep_in_test(i, cfg)).cloned().collect();
    if train.is_empty() {
        return Err(MaskError::Empty("training"));
    }
    if test.is_empty() {
        return Err(MaskError::Empty("test"));
    }
    Ok(DatasetSplit { train, test })
}

/// Relative change of `masked` over `unmasked`.
pub fn degradation(unmasked: f64, masked: f64) -> f64 {
    (masked - unmasked) / unmasked
}
