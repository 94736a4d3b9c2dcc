//! Desk-scale multi-lane freeway simulator.
//!
//! Vehicles follow an intelligent-driver style car-following law, change
//! lanes along a smooth logistic lateral profile and occasionally run a
//! scripted braking maneuver. Lanes are numbered from 1 at the left edge;
//! `x` grows to the right and `y` along the direction of travel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Sample, Track, FRAME_DT, FRAME_RATE_HZ};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lane_count: u32,
    pub lane_width_ft: f64,
    pub vehicle_count: u32,
    /// Recorded duration in seconds; frames run from 0 to `duration_s * 10`.
    pub duration_s: f64,
    /// Unrecorded lead-in so recorded traffic starts settled.
    pub warmup_s: f64,
    /// Road stretch over which vehicles are initially spread, feet.
    pub road_length_ft: f64,
    /// Desired speeds are drawn uniformly from this range, ft/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Hazard of an unprompted lane change, per vehicle-second.
    pub lane_change_rate: f64,
    /// Hazard multiplier while stuck behind a slower leader.
    pub blocked_multiplier: f64,
    /// Hazard of starting a braking maneuver, per vehicle-second.
    pub brake_rate: f64,
    pub lane_change_duration_s: f64,
    pub lane_change_cooldown_s: f64,
    /// Target speed of a braking maneuver as a fraction of its start speed.
    pub brake_factor: f64,
    pub brake_ramp_s: f64,
    pub brake_hold_s: f64,
    /// Center-to-center spacing never violated within a lane, feet.
    pub min_gap_ft: f64,
    pub time_headway_s: f64,
    pub accel_max: f64,
    pub comfortable_decel: f64,
    pub decel_max: f64,
    /// Stationary standard deviation of the in-lane lateral wander, feet.
    pub lateral_wander_ft: f64,
    /// Correlation time of the wander, seconds.
    pub wander_time_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            lane_count: 5,
            lane_width_ft: 12.0,
            vehicle_count: 100,
            duration_s: 60.0,
            warmup_s: 10.0,
            road_length_ft: 3000.0,
            speed_min: 40.0,
            speed_max: 75.0,
            lane_change_rate: 0.04,
            blocked_multiplier: 4.0,
            brake_rate: 0.02,
            lane_change_duration_s: 4.0,
            lane_change_cooldown_s: 8.0,
            brake_factor: 0.6,
            brake_ramp_s: 2.5,
            brake_hold_s: 4.0,
            min_gap_ft: 25.0,
            time_headway_s: 1.2,
            accel_max: 5.0,
            comfortable_decel: 6.0,
            decel_max: 25.0,
            lateral_wander_ft: 0.5,
            wander_time_s: 3.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.lane_count < 3 {
            return bad("lane_count must be at least 3");
        }
        if !(self.duration_s >= 8.0) {
            return bad("duration_s must be at least 8");
        }
        if self.vehicle_count == 0 {
            return bad("vehicle_count must be positive");
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return bad("speed range must satisfy 0 < speed_min <= speed_max");
        }
        if !(self.lane_width_ft > 0.0 && self.min_gap_ft > 0.0 && self.road_length_ft > 0.0) {
            return bad("lane width, minimum gap and road length must be positive");
        }
        if self.lane_change_rate < 0.0 || self.brake_rate < 0.0 || self.blocked_multiplier < 0.0 {
            return bad("maneuver rates must be non-negative");
        }
        if !(self.lateral_wander_ft >= 0.0 && self.wander_time_s > 0.0) {
            return bad("lateral wander must be non-negative with a positive correlation time");
        }
        if !(self.brake_factor > 0.0 && self.brake_factor < 1.0) {
            return bad("brake_factor must lie in (0, 1)");
        }
        if !(self.lane_change_duration_s > 0.0 && self.brake_ramp_s > 0.0 && self.warmup_s >= 0.0) {
            return bad("maneuver durations must be positive");
        }
        let per_lane = self.vehicle_count.div_ceil(self.lane_count) as f64;
        if self.road_length_ft / per_lane < 2.0 * self.min_gap_ft {
            return Err(SimError::Config(format!(
                "{} vehicles cannot be spaced {} ft apart over {} ft of {} lanes",
                self.vehicle_count,
                2.0 * self.min_gap_ft,
                self.road_length_ft,
                self.lane_count
            )));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u32 {
        (self.duration_s * FRAME_RATE_HZ).round() as u32 + 1
    }

    fn lane_center(&self, lane: u32) -> f64 {
        (lane as f64 - 0.5) * self.lane_width_ft
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub lane_changes: usize,
    pub brake_events: usize,
    /// Steps where the minimum-gap guard overrode the car-following law.
    pub gap_clamps: usize,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub tracks: Vec<Track>,
    pub stats: SimStats,
}

#[derive(Debug, Clone, Copy)]
struct LaneChange {
    from: u32,
    to: u32,
    elapsed: f64,
}

#[derive(Debug, Clone, Copy)]
struct Brake {
    start_speed: f64,
    elapsed: f64,
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: u32,
    lane: u32,
    y: f64,
    v: f64,
    desired: f64,
    change: Option<LaneChange>,
    cooldown: f64,
    brake: Option<Brake>,
    /// Lateral offset from the lane-keeping path.
    wander: f64,
}

impl Vehicle {
    fn occupies(&self, lane: u32) -> bool {
        match self.change {
            Some(c) => c.from == lane || c.to == lane,
            None => self.lane == lane,
        }
    }

    fn shares_lane(&self, other: &Vehicle) -> bool {
        match self.change {
            Some(c) => other.occupies(c.from) || other.occupies(c.to),
            None => other.occupies(self.lane),
        }
    }
}

/// Smooth 0→1 ramp over `[0, 1]`: a logistic curve rescaled to hit both ends.
pub fn lateral_profile(s: f64) -> f64 {
    const K: f64 = 10.0;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let lo = sig(-K / 2.0);
    let hi = sig(K / 2.0);
    ((sig(K * (s.clamp(0.0, 1.0) - 0.5)) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

pub fn simulate(config: &SimConfig) -> Result<Simulation, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vehicles = place(config, &mut rng);
    let mut stats = SimStats::default();
    let warmup_steps = (config.warmup_s * FRAME_RATE_HZ).round() as u32;
    let frames = config.frame_count();
    let mut samples: Vec<Vec<Sample>> = vec![Vec::with_capacity(frames as usize); vehicles.len()];

    for step in 0..warmup_steps + frames {
        if step >= warmup_steps {
            let frame = step - warmup_steps;
            for (out, v) in samples.iter_mut().zip(&vehicles) {
                out.push(Sample {
                    frame,
                    x: lateral_position(config, v),
                    y: v.y,
                    lane: v.lane,
                });
            }
        }
        advance(config, &mut vehicles, &mut rng, &mut stats);
    }

    let tracks = vehicles
        .iter()
        .zip(samples)
        .map(|(v, s)| Track::new(v.id, s).expect("simulator emits ordered frames"))
        .collect();
    Ok(Simulation { tracks, stats })
}

fn place(config: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Vehicle> {
    let lanes = config.lane_count;
    let mut vehicles = Vec::with_capacity(config.vehicle_count as usize);
    for lane in 1..=lanes {
        let n = (config.vehicle_count + lanes - lane) / lanes;
        if n == 0 {
            continue;
        }
        let slot = config.road_length_ft / n as f64;
        let jitter = 0.25 * (slot - 2.0 * config.min_gap_ft).max(0.0);
        for k in 0..n {
            let desired = rng.random_range(config.speed_min..=config.speed_max);
            let y = k as f64 * slot + rng.random_range(-jitter..=jitter);
            vehicles.push(Vehicle {
                id: 0,
                lane,
                y,
                v: desired,
                desired,
                change: None,
                cooldown: rng.random_range(0.0..config.lane_change_cooldown_s.max(f64::MIN_POSITIVE)),
                brake: None,
                wander: 0.0,
            });
        }
    }
    // Ids count from the front of the road backwards.
    vehicles.sort_by(|a, b| b.y.total_cmp(&a.y).then(a.lane.cmp(&b.lane)));
    for (i, v) in vehicles.iter_mut().enumerate() {
        v.id = i as u32 + 1;
    }
    vehicles
}

fn lateral_position(config: &SimConfig, v: &Vehicle) -> f64 {
    v.wander
        + match v.change {
            Some(c) => {
                let a = config.lane_center(c.from);
                let b = config.lane_center(c.to);
                a + (b - a) * lateral_profile(c.elapsed / config.lane_change_duration_s)
            }
            None => config.lane_center(v.lane),
        }
}

fn idm_accel(config: &SimConfig, v: f64, desired: f64, leader: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / desired).powi(4);
    let interaction = match leader {
        Some((gap, lead_v)) => {
            let s0 = config.min_gap_ft;
            let dv = v - lead_v;
            let s_star = s0 + (v * config.time_headway_s + v * dv / (2.0 * (config.accel_max * config.comfortable_decel).sqrt())).max(0.0);
            (s_star / gap.max(1e-3)).powi(2)
        }
        None => 0.0,
    };
    config.accel_max * (free - interaction)
}

/// Nearest vehicle ahead among `ahead` sharing a lane with `me`.
fn leader<'a>(me: &Vehicle, ahead: &'a [Vehicle]) -> Option<&'a Vehicle> {
    ahead.iter().filter(|o| me.shares_lane(o)).min_by(|a, b| a.y.total_cmp(&b.y))
}

fn lane_is_free(config: &SimConfig, me: &Vehicle, lane: u32, others: &[Vehicle]) -> bool {
    others.iter().filter(|o| o.id != me.id && o.occupies(lane)).all(|o| {
        let gap = o.y - me.y;
        if gap >= 0.0 {
            gap >= config.min_gap_ft + config.time_headway_s * me.v
        } else {
            -gap >= config.min_gap_ft + config.time_headway_s * o.v
        }
    })
}

fn advance(config: &SimConfig, vehicles: &mut [Vehicle], rng: &mut ChaCha8Rng, stats: &mut SimStats) {
    let dt = FRAME_DT;
    vehicles.sort_by(|a, b| b.y.total_cmp(&a.y).then(a.id.cmp(&b.id)));
    for i in 0..vehicles.len() {
        let (ahead, rest) = vehicles.split_at_mut(i);
        let (me, behind) = rest.split_first_mut().expect("index in range");
        let lead = leader(me, ahead).map(|l| (l.y - me.y, l.v, l.y));

        if me.brake.is_none() && me.v > 10.0 && rng.random::<f64>() < config.brake_rate * dt {
            me.brake = Some(Brake { start_speed: me.v, elapsed: 0.0 });
            stats.brake_events += 1;
        }

        if me.change.is_none() && me.cooldown <= 0.0 {
            let blocked = lead.is_some_and(|(gap, lead_v, _)| {
                lead_v < me.desired - 5.0 && gap < config.min_gap_ft + 3.0 * me.v
            });
            let rate = config.lane_change_rate * if blocked { config.blocked_multiplier } else { 1.0 };
            if rng.random::<f64>() < rate * dt {
                let left = me.lane > 1;
                let right = me.lane < config.lane_count;
                let go_left = match (left, right) {
                    (true, true) => rng.random::<bool>(),
                    (l, _) => l,
                };
                let to = if go_left { me.lane - 1 } else { me.lane + 1 };
                if lane_is_free(config, me, to, ahead) && lane_is_free(config, me, to, behind) {
                    me.change = Some(LaneChange { from: me.lane, to, elapsed: 0.0 });
                    stats.lane_changes += 1;
                }
            }
        }

        // Re-evaluate the leader: a maneuver that just began widens the lane set.
        let lead = leader(me, ahead).map(|l| (l.y - me.y, l.v, l.y));
        let mut a = idm_accel(config, me.v, me.desired, lead.map(|(g, v, _)| (g, v)));
        if let Some(b) = &mut me.brake {
            let total = config.brake_ramp_s + config.brake_hold_s;
            let frac = 1.0 - (1.0 - config.brake_factor) * smoothstep(b.elapsed / config.brake_ramp_s);
            let target = b.start_speed * frac;
            a = a.min((target - me.v) / 0.5);
            b.elapsed += dt;
            if b.elapsed >= total {
                me.brake = None;
            }
        }
        let a = a.clamp(-config.decel_max, config.accel_max);
        me.v = (me.v + a * dt).clamp(0.0, config.speed_max);
        me.y += me.v * dt;
        if let Some((_, lead_v, lead_y)) = lead {
            let limit = lead_y - config.min_gap_ft;
            if me.y > limit {
                me.y = limit;
                me.v = me.v.min(lead_v);
                stats.gap_clamps += 1;
            }
        }

        if config.lateral_wander_ft > 0.0 {
            // Ornstein-Uhlenbeck step with the configured stationary spread.
            let decay = (-dt / config.wander_time_s).exp();
            let z: f64 = rng.sample(StandardNormal);
            me.wander = me.wander * decay + config.lateral_wander_ft * (1.0 - decay * decay).sqrt() * z;
        }

        if let Some(c) = &mut me.change {
            c.elapsed += dt;
            if c.elapsed >= config.lane_change_duration_s / 2.0 {
                me.lane = c.to;
            }
            if c.elapsed >= config.lane_change_duration_s - 1e-9 {
                me.change = None;
                me.cooldown = config.lane_change_cooldown_s;
            }
        } else {
            me.cooldown -= dt;
        }
    }
    vehicles.sort_by_key(|v| v.id);
}
