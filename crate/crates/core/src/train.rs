//! Mini-batch Adam training with early stopping.

use csp_tensor::{Adam, AdamConfig, ParamStore};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validation_split, DatasetSplit, PredictionInstance};
use crate::model::{CspModel, ModelConfig, ModelError, ModelMode};

pub const LOSS_CURVE_FORMAT: &str = "forecast-loss-curve";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("nothing to train on")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] csp_tensor::TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Factor applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Maximum joint gradient norm per step; 0 disables clipping.
    pub grad_clip: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            patience: 5,
            grad_clip: 10.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn mode(&self) -> ModelMode {
        self.model.mode
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::Config("lr_decay must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(TrainError::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Epoch 0 is the untrained model over the full training set; later
    /// epochs average the mini-batch losses seen during the epoch.
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochLoss>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {LOSS_CURVE_FORMAT} v1\nepoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.validation.map_or(String::new(), |v| format!("{v:?}"));
            out.push_str(&format!("{},{:?},{}\n", e.epoch, e.train, val));
        }
        out
    }

    pub fn initial_train(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.train)
    }

    pub fn final_train(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train)
    }
}

pub struct TrainOutcome {
    pub model: CspModel,
    pub curve: LossCurve,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean training objective over `instances`, evaluated in chunks.
pub fn mean_loss(model: &CspModel, instances: &[PredictionInstance], chunk: usize) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for part in instances.chunks(chunk.max(1)) {
        let refs: Vec<&PredictionInstance> = part.iter().collect();
        total += model.training_loss(&refs)? * part.len() as f64;
    }
    Ok(total / instances.len() as f64)
}

/// Trains on `train`, keeping the parameters with the best validation loss
/// (or the best epoch loss when `validation` is empty).
pub fn train(
    train: &[PredictionInstance],
    validation: &[PredictionInstance],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model = CspModel::new(config.model.clone(), config.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let eval_chunk = config.batch_size.max(64);
    let score = |model: &CspModel, epoch_train: f64| -> Result<(f64, Option<f64>), TrainError> {
        if validation.is_empty() {
            Ok((epoch_train, None))
        } else {
            let v = mean_loss(model, validation, eval_chunk)?;
            Ok((v, Some(v)))
        }
    };

    let initial = mean_loss(&model, train, eval_chunk)?;
    let (mut best_score, val0) = score(&model, initial)?;
    let mut curve = LossCurve {
        epochs: vec![EpochLoss { epoch: 0, train: initial, validation: val0 }],
    };
    let mut best: ParamStore = model.params().clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PredictionInstance> = idx.iter().map(|&i| &train[i]).collect();
            let loss = model.accumulate_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b, loss });
            }
            if config.grad_clip > 0.0 {
                model.params_mut().clip_grad_norm(config.grad_clip);
            }
            adam.step(model.params_mut())?;
            sum += loss * batch.len() as f64;
        }
        adam.config.lr *= config.lr_decay;
        let epoch_train = sum / train.len() as f64;
        let (s, val) = score(&model, epoch_train)?;
        curve.epochs.push(EpochLoss { epoch, train: epoch_train, validation: val });
        info!("{} epoch {epoch}: train {epoch_train:.4} val {val:?}", config.mode());
        if s < best_score {
            best_score = s;
            best = model.params().clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    model.params_mut().load_values(&best)?;
    Ok(TrainOutcome { model, curve, best_epoch })
}

/// Trains on a split's training side with a vehicle-disjoint validation hold-out.
pub fn train_split(split: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let (fit, val) = validation_split(&split.train);
    train(&fit, &val, config)
}
