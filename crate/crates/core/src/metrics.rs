//! Likelihood and displacement metrics, and evaluation reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Lateral, Longitudinal, PredictionInstance, FUTURE_LEN};
use crate::model::{BivariateGaussian, PredictiveDistribution, Predictor};

pub const FEET_TO_METERS: f64 = 0.3048;
/// Reported horizons in seconds and their future-step indices.
pub const HORIZONS_S: [u32; 5] = [1, 2, 3, 4, 5];
pub const HORIZON_STEPS: [usize; 5] = [4, 9, 14, 19, 24];

pub const EVAL_FORMAT: &str = "forecast-eval";
pub const EVAL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("cannot evaluate an empty set")]
    Empty,
}

/// `−ln N((x, y); μ, Σ)` in nats.
pub fn bivariate_nll(g: &BivariateGaussian, x: f64, y: f64) -> Result<f64, MetricsError> {
    if !g.is_valid() {
        return Err(MetricsError::Contract(format!("invalid Gaussian parameters {g:?}")));
    }
    Ok(-g.log_density(x, y))
}

/// Numerically stable `ln Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mixture NLL of the true position at future `step`, with lengths in meters.
pub fn eval_nll(pred: &PredictiveDistribution, truth: &[[f64; 2]], step: usize) -> Result<f64, MetricsError> {
    let [x, y] = truth[step];
    let (x, y) = (x * FEET_TO_METERS, y * FEET_TO_METERS);
    let mut terms = Vec::with_capacity(pred.components.len());
    for c in &pred.components {
        let g = c.sequence.steps[step];
        if !g.is_valid() {
            return Err(MetricsError::Contract(format!("invalid Gaussian parameters {g:?}")));
        }
        if c.weight > 0.0 {
            terms.push(c.weight.ln() + g.scaled(FEET_TO_METERS).log_density(x, y));
        }
    }
    if terms.is_empty() {
        return Err(MetricsError::Contract("mixture has no positive weight".into()));
    }
    Ok(-log_sum_exp(&terms))
}

/// RMSE in meters at future `step` of the highest-weight component means.
pub fn eval_rmse(preds: &[PredictiveDistribution], truths: &[&[[f64; 2]]], step: usize) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    if preds.len() != truths.len() {
        return Err(MetricsError::Contract(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    let sq: f64 = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| {
            let g = p.most_likely().sequence.steps[step];
            let dx = g.mu_x - t[step][0];
            let dy = g.mu_y - t[step][1];
            dx * dx + dy * dy
        })
        .sum();
    Ok((sq / preds.len() as f64).sqrt() * FEET_TO_METERS)
}

/// Summed per-step NLL (feet) of `truth` under the component of the true
/// maneuver, minus the log probability of that maneuver. Models without a
/// maneuver decoder contribute only the first term.
pub fn training_loss(pred: &PredictiveDistribution, truth: &[[f64; 2]], lat: Lateral, lon: Longitudinal) -> f64 {
    let (comp, prob) = match pred.maneuvers {
        Some(m) => (pred.mode_for(lat, lon).expect("six components"), m.probability(lat, lon)),
        None => (&pred.components[0], 1.0),
    };
    let nll: f64 = comp.sequence.steps.iter().zip(truth).map(|(g, y)| -g.log_density(y[0], y[1])).sum();
    nll - prob.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub seed: u64,
    pub count: usize,
    pub horizons_s: Vec<u32>,
    pub rmse_m: Vec<f64>,
    pub nll: Vec<f64>,
}

impl EvalReport {
    pub fn rmse_at(&self, seconds: u32) -> Option<f64> {
        self.horizons_s.iter().position(|&h| h == seconds).map(|i| self.rmse_m[i])
    }

    pub fn nll_at(&self, seconds: u32) -> Option<f64> {
        self.horizons_s.iter().position(|&h| h == seconds).map(|i| self.nll[i])
    }
}

pub fn evaluate_predictions(
    mode: &str,
    seed: u64,
    preds: &[PredictiveDistribution],
    instances: &[PredictionInstance],
) -> Result<EvalReport, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::Empty);
    }
    if preds.iter().any(|p| p.horizon() != FUTURE_LEN) {
        return Err(MetricsError::Contract(format!("predictions must span {FUTURE_LEN} steps")));
    }
    let truths: Vec<&[[f64; 2]]> = instances.iter().map(|i| i.future.as_slice()).collect();
    let mut rmse = Vec::new();
    let mut nll = Vec::new();
    for &step in &HORIZON_STEPS {
        rmse.push(eval_rmse(preds, &truths, step)?);
        let mut total = 0.0;
        for (p, t) in preds.iter().zip(&truths) {
            total += eval_nll(p, t, step)?;
        }
        nll.push(total / preds.len() as f64);
    }
    Ok(EvalReport {
        mode: mode.to_string(),
        seed,
        count: instances.len(),
        horizons_s: HORIZONS_S.to_vec(),
        rmse_m: rmse,
        nll,
    })
}

pub fn evaluate(predictor: &dyn Predictor, instances: &[PredictionInstance], seed: u64) -> crate::Result<EvalReport> {
    let preds = predictor.predict_batch(instances)?;
    Ok(evaluate_predictions(&predictor.name(), seed, &preds, instances)?)
}

/// CSV with one row per horizon and `rmse_m:<mode>`, `nll:<mode>` columns.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("# {EVAL_FORMAT} v{EVAL_FORMAT_VERSION}\nhorizon_s");
    for r in reports {
        out.push_str(&format!(",rmse_m:{},nll:{}", r.mode, r.mode));
    }
    out.push('\n');
    for (i, h) in HORIZONS_S.iter().enumerate() {
        out.push_str(&h.to_string());
        for r in reports {
            out.push_str(&format!(",{:?},{:?}", r.rmse_m[i], r.nll[i]));
        }
        out.push('\n');
    }
    out
}

/// JSON Lines: a header object, then one report per line.
pub fn reports_to_jsonl(reports: &[EvalReport]) -> String {
    let mut out = serde_json::json!({ "format": EVAL_FORMAT, "version": EVAL_FORMAT_VERSION }).to_string();
    out.push('\n');
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("reports serialize"));
        out.push('\n');
    }
    out
}
