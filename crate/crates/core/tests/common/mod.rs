#![allow(dead_code)]

use forecast_core::data::{Lateral, Longitudinal, Neighbor, PredictionInstance, FUTURE_LEN, HISTORY_LEN};
use rand::Rng;

/// Constant-velocity history ending at the origin, plus its continuation.
pub fn cv_paths(vx: f64, vy: f64) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let dt = 0.2;
    let history = (0..HISTORY_LEN)
        .map(|k| {
            let t = (k as f64 - (HISTORY_LEN - 1) as f64) * dt;
            [vx * t, vy * t]
        })
        .collect();
    let future = (1..=FUTURE_LEN).map(|k| [vx * k as f64 * dt, vy * k as f64 * dt]).collect();
    (history, future)
}

pub fn random_history<R: Rng>(rng: &mut R, x0: f64, y0: f64) -> Vec<[f64; 2]> {
    let vy = rng.random_range(30.0..70.0);
    let vx = rng.random_range(-3.0..3.0);
    (0..HISTORY_LEN)
        .map(|k| {
            let t = (k as f64 - (HISTORY_LEN - 1) as f64) * 0.2;
            [x0 + vx * t + rng.random_range(-0.3..0.3), y0 + vy * t + rng.random_range(-0.5..0.5)]
        })
        .collect()
}

pub fn random_instance<R: Rng>(rng: &mut R, vehicle_id: u32) -> PredictionInstance {
    let mut history = random_history(rng, 0.0, 0.0);
    history[HISTORY_LEN - 1] = [0.0, 0.0];
    let vy = rng.random_range(30.0..70.0);
    let vx = rng.random_range(-2.0..2.0);
    let future = (1..=FUTURE_LEN).map(|k| [vx * k as f64 * 0.2, vy * k as f64 * 0.2]).collect();
    let count = rng.random_range(0..6);
    let neighbors = (0..count)
        .map(|i| {
            let lane_offset = rng.random_range(-1..=1);
            let dy = rng.random_range(-90.0..90.0);
            Neighbor {
                vehicle_id: 1000 + i,
                lane_offset,
                dy,
                history: random_history(rng, 12.0 * lane_offset as f64, dy),
            }
        })
        .collect();
    PredictionInstance {
        source: "test".into(),
        vehicle_id,
        frame: 100,
        lane: 2,
        history,
        future,
        lateral: Lateral::ALL[rng.random_range(0..3)],
        longitudinal: Longitudinal::ALL[rng.random_range(0..2)],
        neighbors,
    }
}
