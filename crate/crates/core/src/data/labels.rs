use serde::{Deserialize, Serialize};

use super::{Track, FRAME_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lateral {
    LeftChange,
    Keep,
    RightChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Longitudinal {
    Normal,
    Brake,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::LeftChange, Lateral::Keep, Lateral::RightChange];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 2] = [Longitudinal::Normal, Longitudinal::Brake];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Half-width of the lane-changing state around a cross-over, in frames.
    pub lane_change_window: u32,
    /// Braking when mean horizon speed is below this fraction of current speed.
    pub brake_ratio: f64,
    /// Horizon over which the mean speed is taken, in frames.
    pub horizon: u32,
    /// NGSIM numbers lanes left to right, so a decreasing lane id is a left change.
    pub decreasing_lane_is_left: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            lane_change_window: 40,
            brake_ratio: 0.8,
            horizon: 50,
            decreasing_lane_is_left: true,
        }
    }
}

/// Lane-change label: the cross-over nearest to `t` within the window
/// decides the direction. Frames missing from the track count as no
/// cross-over.
pub fn label_lateral(track: &Track, t: u32, cfg: &LabelConfig) -> Lateral {
    let lo = t.saturating_sub(cfg.lane_change_window);
    let hi = t.saturating_add(cfg.lane_change_window);
    let mut best: Option<(u32, i64)> = None;
    for w in track.samples().windows(2) {
        let (a, b) = (w[0], w[1]);
        if b.frame < lo || b.frame > hi || a.lane == b.lane {
            continue;
        }
        let dist = b.frame.abs_diff(t);
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, b.lane as i64 - a.lane as i64));
        }
    }
    match best {
        None => Lateral::Keep,
        Some((_, delta)) => {
            let left = (delta < 0) == cfg.decreasing_lane_is_left;
            if left {
                Lateral::LeftChange
            } else {
                Lateral::RightChange
            }
        }
    }
}

/// Braking label from finite-difference speeds. The speed at `t` is the
/// backward difference into `t`; the horizon speed is path length over
/// `[t, t + horizon]` divided by its duration. A stationary vehicle, or one
/// whose speeds cannot be computed, is labelled normal.
pub fn label_longitudinal(track: &Track, t: u32, cfg: &LabelConfig) -> Longitudinal {
    let Some(current) = speed_at(track, t) else {
        return Longitudinal::Normal;
    };
    if current <= 0.0 || !track.covers(t, t + cfg.horizon) {
        return Longitudinal::Normal;
    }
    let path: f64 = (t..t + cfg.horizon)
        .map(|f| {
            let (a, b) = (track.at(f).unwrap(), track.at(f + 1).unwrap());
            (b.x - a.x).hypot(b.y - a.y)
        })
        .sum();
    let mean = path / (cfg.horizon as f64 * FRAME_DT);
    if mean < cfg.brake_ratio * current {
        Longitudinal::Brake
    } else {
        Longitudinal::Normal
    }
}

fn speed_at(track: &Track, t: u32) -> Option<f64> {
    let b = track.at(t)?;
    let a = track.at(t.checked_sub(1)?)?;
    Some((b.x - a.x).hypot(b.y - a.y) / FRAME_DT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn track_with_lanes(lanes: impl Fn(u32) -> u32, n: u32) -> Track {
        let samples = (0..n)
            .map(|f| Sample {
                frame: f,
                x: 0.0,
                y: f as f64,
                lane: lanes(f),
            })
            .collect();
        Track::new(1, samples).unwrap()
    }

    #[test]
    fn constant_lane_is_keep() {
        let t = track_with_lanes(|_| 3, 200);
        assert_eq!(label_lateral(&t, 100, &LabelConfig::default()), Lateral::Keep);
    }

    #[test]
    fn cross_over_inside_and_outside_window() {
        let cfg = LabelConfig::default();
        // Cross-over at t + 3.9 s: first frame in the new lane is t + 39.
        let t = track_with_lanes(|f| if f >= 139 { 2 } else { 3 }, 300);
        assert_eq!(label_lateral(&t, 100, &cfg), Lateral::LeftChange);
        let t = track_with_lanes(|f| if f >= 141 { 4 } else { 3 }, 300);
        assert_eq!(label_lateral(&t, 100, &cfg), Lateral::Keep);
        // Exactly on the boundary counts.
        let t = track_with_lanes(|f| if f >= 60 { 4 } else { 3 }, 300);
        assert_eq!(label_lateral(&t, 100, &cfg), Lateral::RightChange);
    }

    #[test]
    fn direction_convention_is_configurable() {
        let cfg = LabelConfig {
            decreasing_lane_is_left: false,
            ..LabelConfig::default()
        };
        let t = track_with_lanes(|f| if f >= 110 { 2 } else { 3 }, 300);
        assert_eq!(label_lateral(&t, 100, &cfg), Lateral::RightChange);
    }

    #[test]
    fn nearest_cross_over_wins() {
        let t = track_with_lanes(|f| if (80..125).contains(&f) { 2 } else { 3 }, 300);
        // Left at frame 80 (20 away), right at 125 (25 away).
        assert_eq!(label_lateral(&t, 100, &LabelConfig::default()), Lateral::LeftChange);
    }

    /// Steps of `current` feet up to `t`, then `future` feet per frame.
    fn speed_track(current: f64, future: f64) -> Track {
        let mut y = 0.0;
        let samples = (0..=150u32)
            .map(|f| {
                if f > 0 {
                    y += if f <= 100 { current } else { future };
                }
                Sample { frame: f, x: 0.0, y, lane: 1 }
            })
            .collect();
        Track::new(1, samples).unwrap()
    }

    #[test]
    fn braking_threshold_is_strict() {
        let cfg = LabelConfig::default();
        assert_eq!(label_longitudinal(&speed_track(10.0, 10.0), 100, &cfg), Longitudinal::Normal);
        assert_eq!(label_longitudinal(&speed_track(10.0, 7.9), 100, &cfg), Longitudinal::Brake);
        assert_eq!(label_longitudinal(&speed_track(10.0, 8.0), 100, &cfg), Longitudinal::Normal);
    }

    #[test]
    fn stationary_vehicle_is_normal() {
        assert_eq!(label_longitudinal(&speed_track(0.0, 0.0), 100, &LabelConfig::default()), Longitudinal::Normal);
    }
}
