//! Constant-velocity Kalman filter baseline.

use nalgebra::{Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PredictionInstance, FUTURE_LEN};
use crate::model::{BivariateGaussian, GaussianParamSequence, PredictiveDistribution, Predictor};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("constant-velocity filter needs at least 2 history points, got {0}")]
    ShortHistory(usize),
    #[error("invalid filter config: {0}")]
    Config(String),
}

/// White-noise-acceleration model over state `(x, y, vx, vy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvKalmanConfig {
    /// Acceleration noise spectral density, ft²/s³.
    pub process_noise: f64,
    /// Position measurement variance, ft².
    pub measurement_noise: f64,
    /// Seconds between history points and between forecast steps.
    pub dt: f64,
    pub sigma_floor_ft: f64,
    pub rho_margin: f64,
}

impl Default for CvKalmanConfig {
    fn default() -> Self {
        CvKalmanConfig {
            process_noise: 10.0,
            measurement_noise: 0.5,
            dt: 0.2,
            sigma_floor_ft: 1e-2,
            rho_margin: 1e-4,
        }
    }
}

impl CvKalmanConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !(self.process_noise >= 0.0 && self.process_noise.is_finite()) {
            return Err(BaselineError::Config("process_noise must be finite and non-negative".into()));
        }
        if !(self.measurement_noise > 0.0 && self.measurement_noise.is_finite()) {
            return Err(BaselineError::Config("measurement_noise must be finite and positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(BaselineError::Config("dt must be positive".into()));
        }
        Ok(())
    }

    fn transition(&self) -> Matrix4<f64> {
        let dt = self.dt;
        Matrix4::new(
            1.0, 0.0, dt, 0.0, //
            0.0, 1.0, 0.0, dt, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0,
        )
    }

    fn process_covariance(&self) -> Matrix4<f64> {
        let dt = self.dt;
        let q = self.process_noise;
        let (a, b, c) = (q * dt.powi(3) / 3.0, q * dt * dt / 2.0, q * dt);
        Matrix4::new(
            a, 0.0, b, 0.0, //
            0.0, a, 0.0, b, //
            b, 0.0, c, 0.0, //
            0.0, b, 0.0, c,
        )
    }
}

/// Filter output: state mean and covariance after each forecast step.
#[derive(Debug, Clone)]
pub struct CvTrace {
    pub means: Vec<Vector4<f64>>,
    pub covariances: Vec<Matrix4<f64>>,
}

/// Filters `history` then propagates `FUTURE_LEN` steps open-loop.
pub fn cv_trace(history: &[[f64; 2]], config: &CvKalmanConfig) -> Result<CvTrace, BaselineError> {
    config.validate()?;
    if history.len() < 2 {
        return Err(BaselineError::ShortHistory(history.len()));
    }
    let dt = config.dt;
    let r = config.measurement_noise;
    let [x0, y0] = history[0];
    let [x1, y1] = history[1];
    // Two-point initialization at the second sample.
    let mut m = Vector4::new(x1, y1, (x1 - x0) / dt, (y1 - y0) / dt);
    let mut p = Matrix4::new(
        r, 0.0, r / dt, 0.0, //
        0.0, r, 0.0, r / dt, //
        r / dt, 0.0, 2.0 * r / (dt * dt), 0.0, //
        0.0, r / dt, 0.0, 2.0 * r / (dt * dt),
    );
    let f = config.transition();
    let q = config.process_covariance();
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let rm = nalgebra::Matrix2::identity() * r;
    for z in &history[2..] {
        m = f * m;
        p = f * p * f.transpose() + q;
        let s = h * p * h.transpose() + rm;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let k = p * h.transpose() * s_inv;
        m += k * (Vector2::new(z[0], z[1]) - h * m);
        // Joseph form keeps the covariance symmetric positive definite.
        let i_kh = Matrix4::identity() - k * h;
        p = i_kh * p * i_kh.transpose() + k * rm * k.transpose();
    }
    let mut trace = CvTrace {
        means: Vec::with_capacity(FUTURE_LEN),
        covariances: Vec::with_capacity(FUTURE_LEN),
    };
    for _ in 0..FUTURE_LEN {
        m = f * m;
        p = f * p * f.transpose() + q;
        trace.means.push(m);
        trace.covariances.push(p);
    }
    Ok(trace)
}

pub fn cv_predict(history: &[[f64; 2]], config: &CvKalmanConfig) -> Result<GaussianParamSequence, BaselineError> {
    let trace = cv_trace(history, config)?;
    let steps = trace
        .means
        .iter()
        .zip(&trace.covariances)
        .map(|(m, p)| {
            let sx = p[(0, 0)].sqrt();
            let sy = p[(1, 1)].sqrt();
            let limit = 1.0 - config.rho_margin;
            let rho = if sx > 0.0 && sy > 0.0 { (p[(0, 1)] / (sx * sy)).clamp(-limit, limit) } else { 0.0 };
            BivariateGaussian {
                mu_x: m[0],
                mu_y: m[1],
                sigma_x: sx.max(config.sigma_floor_ft),
                sigma_y: sy.max(config.sigma_floor_ft),
                rho,
            }
        })
        .collect();
    Ok(GaussianParamSequence { steps })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvKalman {
    pub config: CvKalmanConfig,
}

impl Predictor for CvKalman {
    fn name(&self) -> String {
        "CV".into()
    }

    fn predict_batch(&self, instances: &[PredictionInstance]) -> crate::Result<Vec<PredictiveDistribution>> {
        instances
            .iter()
            .map(|i| Ok(PredictiveDistribution::unimodal(cv_predict(&i.history, &self.config)?)))
            .collect()
    }
}

pub const PROCESS_NOISE_GRID: [f64; 8] = [0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];
pub const MEASUREMENT_NOISE_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Picks the grid point with the lowest mean summed future NLL on
/// `instances`. Ties keep the earlier grid point.
pub fn fit_noise(instances: &[PredictionInstance], base: &CvKalmanConfig) -> Result<CvKalmanConfig, BaselineError> {
    let mut best = (f64::INFINITY, *base);
    for &q in &PROCESS_NOISE_GRID {
        for &r in &MEASUREMENT_NOISE_GRID {
            let cfg = CvKalmanConfig {
                process_noise: q,
                measurement_noise: r,
                ..*base
            };
            let mut total = 0.0;
            for inst in instances {
                let seq = cv_predict(&inst.history, &cfg)?;
                total -= seq.steps.iter().zip(&inst.future).map(|(g, y)| g.log_density(y[0], y[1])).sum::<f64>();
            }
            let mean = total / instances.len().max(1) as f64;
            if mean < best.0 {
                best = (mean, cfg);
            }
        }
    }
    Ok(best.1)
}
