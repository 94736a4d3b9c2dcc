use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{label_lateral, label_longitudinal, DataError, LabelConfig, Lateral, Longitudinal, Sample, Track};

/// History points per instance: `t − 3.0 s … t` at 5 Hz.
pub const HISTORY_LEN: usize = 16;
/// Future points per instance: `t + 0.2 s … t + 5.0 s` at 5 Hz.
pub const FUTURE_LEN: usize = 25;
/// 10 Hz frames between consecutive 5 Hz points.
pub const STEP_FRAMES: u32 = 2;
pub const HISTORY_FRAMES: u32 = STEP_FRAMES * (HISTORY_LEN as u32 - 1);
pub const FUTURE_FRAMES: u32 = STEP_FRAMES * FUTURE_LEN as u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub vehicle_id: u32,
    /// Neighbor lane minus ego lane at prediction time.
    pub lane_offset: i32,
    /// Longitudinal offset from the ego at prediction time, feet.
    pub dy: f64,
    /// `HISTORY_LEN` positions in the ego frame.
    pub history: Vec<[f64; 2]>,
}

/// One prediction problem: an ego vehicle at frame `frame`, with every
/// coordinate expressed relative to the ego's position at that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionInstance {
    pub source: String,
    pub vehicle_id: u32,
    pub frame: u32,
    pub lane: u32,
    pub history: Vec<[f64; 2]>,
    pub future: Vec<[f64; 2]>,
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
    pub neighbors: Vec<Neighbor>,
}

/// Translation that puts a vehicle's position at some frame at the origin.
/// Axes are unchanged: y stays along the direction of travel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOrigin {
    pub x: f64,
    pub y: f64,
}

impl FrameOrigin {
    pub fn at(track: &Track, frame: u32) -> Option<Self> {
        track.at(frame).map(|s| FrameOrigin { x: s.x, y: s.y })
    }

    pub fn apply(&self, x: f64, y: f64) -> [f64; 2] {
        [x - self.x, y - self.y]
    }
}

/// Re-expresses every track relative to `ego_id`'s position at `t`. The ego
/// must have contiguous samples over the full history and horizon.
pub fn to_prediction_frame(tracks: &[Track], ego_id: u32, t: u32) -> Result<Vec<Track>, DataError> {
    let ego = tracks.iter().find(|tr| tr.vehicle_id == ego_id).ok_or(DataError::UnknownVehicle(ego_id))?;
    let from = t.checked_sub(HISTORY_FRAMES).ok_or(DataError::InsufficientTrack {
        vehicle_id: ego_id,
        from: 0,
        to: t + FUTURE_FRAMES,
    })?;
    if !ego.covers(from, t + FUTURE_FRAMES) {
        return Err(DataError::InsufficientTrack {
            vehicle_id: ego_id,
            from,
            to: t + FUTURE_FRAMES,
        });
    }
    let origin = FrameOrigin::at(ego, t).expect("covered");
    tracks
        .iter()
        .map(|tr| {
            let samples = tr
                .samples()
                .iter()
                .map(|s| {
                    let [x, y] = origin.apply(s.x, s.y);
                    Sample { x, y, ..*s }
                })
                .collect();
            Track::new(tr.vehicle_id, samples)
        })
        .collect()
}

/// Tracks from one source with a per-frame presence index.
#[derive(Debug, Clone)]
pub struct Scene {
    pub source: String,
    tracks: Vec<Track>,
    by_frame: HashMap<u32, Vec<usize>>,
}

impl Scene {
    pub fn new(source: impl Into<String>, mut tracks: Vec<Track>) -> Self {
        tracks.sort_by_key(|t| t.vehicle_id);
        let mut by_frame: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, t) in tracks.iter().enumerate() {
            for s in t.samples() {
                by_frame.entry(s.frame).or_default().push(i);
            }
        }
        Scene {
            source: source.into(),
            tracks,
            by_frame,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn present_at(&self, frame: u32) -> impl Iterator<Item = &Track> {
        self.by_frame.get(&frame).into_iter().flatten().map(|&i| &self.tracks[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Frames between consecutive prediction instants of one vehicle.
    pub stride: u32,
    /// Longitudinal reach of the neighborhood, feet.
    pub neighbor_range_ft: f64,
    pub labels: LabelConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            stride: 10,
            neighbor_range_ft: 90.0,
            labels: LabelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExtractReport {
    /// Ordered by (vehicle id, frame).
    pub instances: Vec<PredictionInstance>,
    /// Tracks shorter than history plus horizon.
    pub short_tracks: usize,
    /// Candidate instants skipped because of gaps in the ego track.
    pub skipped_windows: usize,
    /// Neighbors left out for lacking a full history.
    pub dropped_neighbors: usize,
}

fn history_frames(t: u32) -> impl Iterator<Item = u32> {
    (0..HISTORY_LEN as u32).map(move |k| t - HISTORY_FRAMES + k * STEP_FRAMES)
}

fn future_frames(t: u32) -> impl Iterator<Item = u32> {
    (1..=FUTURE_LEN as u32).map(move |k| t + k * STEP_FRAMES)
}

pub fn extract_instances(scene: &Scene, cfg: &ExtractConfig) -> ExtractReport {
    let mut report = ExtractReport::default();
    let stride = cfg.stride.max(1);
    for ego in scene.tracks() {
        let first = ego.first_frame() + HISTORY_FRAMES;
        if ego.last_frame() < first + FUTURE_FRAMES {
            report.short_tracks += 1;
            continue;
        }
        let mut t = first;
        while t + FUTURE_FRAMES <= ego.last_frame() {
            if ego.covers(t - HISTORY_FRAMES, t + FUTURE_FRAMES) {
                let inst = build_instance(scene, ego, t, cfg, &mut report.dropped_neighbors);
                report.instances.push(inst);
            } else {
                report.skipped_windows += 1;
            }
            t += stride;
        }
    }
    report
}

/// The instance of `vehicle_id` at frame `t`, if its track covers the
/// full history and horizon around `t`. Ignores the stride.
pub fn instance_at(scene: &Scene, vehicle_id: u32, t: u32, cfg: &ExtractConfig) -> Option<PredictionInstance> {
    let ego = scene.tracks().iter().find(|tr| tr.vehicle_id == vehicle_id)?;
    if t < HISTORY_FRAMES || !ego.covers(t - HISTORY_FRAMES, t + FUTURE_FRAMES) {
        return None;
    }
    Some(build_instance(scene, ego, t, cfg, &mut 0))
}

fn build_instance(scene: &Scene, ego: &Track, t: u32, cfg: &ExtractConfig, dropped: &mut usize) -> PredictionInstance {
    let now = *ego.at(t).expect("covered");
    let origin = FrameOrigin { x: now.x, y: now.y };
    let at = |tr: &Track, f: u32| tr.at(f).map(|s| origin.apply(s.x, s.y));
    let history = history_frames(t).map(|f| at(ego, f).expect("covered")).collect();
    let future = future_frames(t).map(|f| at(ego, f).expect("covered")).collect();

    let mut neighbors = Vec::new();
    for other in scene.present_at(t) {
        if other.vehicle_id == ego.vehicle_id {
            continue;
        }
        let s = other.at(t).expect("indexed");
        let lane_offset = s.lane as i64 - now.lane as i64;
        let dy = s.y - now.y;
        if lane_offset.abs() > 1 || dy.abs() > cfg.neighbor_range_ft {
            continue;
        }
        let history: Option<Vec<[f64; 2]>> = history_frames(t).map(|f| at(other, f)).collect();
        match history {
            Some(history) => neighbors.push(Neighbor {
                vehicle_id: other.vehicle_id,
                lane_offset: lane_offset as i32,
                dy,
                history,
            }),
            None => *dropped += 1,
        }
    }
    PredictionInstance {
        source: scene.source.clone(),
        vehicle_id: ego.vehicle_id,
        frame: t,
        lane: now.lane,
        history,
        future,
        lateral: label_lateral(ego, t, &cfg.labels),
        longitudinal: label_longitudinal(ego, t, &cfg.labels),
        neighbors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(vid: u32, frames: std::ops::RangeInclusive<u32>, x: f64, y0: f64, lane: u32) -> Track {
        let samples = frames.map(|f| Sample { frame: f, x, y: y0 + f as f64 * 5.0, lane }).collect();
        Track::new(vid, samples).unwrap()
    }

    #[test]
    fn eight_second_track_gives_one_instance() {
        let scene = Scene::new("s", vec![straight(1, 100..=180, 6.0, 0.0, 1)]);
        let r = extract_instances(&scene, &ExtractConfig::default());
        assert_eq!(r.instances.len(), 1);
        assert_eq!(r.instances[0].frame, 130);
        let short = Scene::new("s", vec![straight(1, 100..=179, 6.0, 0.0, 1)]);
        let r = extract_instances(&short, &ExtractConfig::default());
        assert!(r.instances.is_empty());
        assert_eq!(r.short_tracks, 1);
    }

    #[test]
    fn instance_at_matches_the_strided_extraction() {
        let scene = Scene::new("s", vec![straight(1, 0..=300, 6.0, 12.0, 1), straight(2, 0..=300, 18.0, 40.0, 2)]);
        let r = extract_instances(&scene, &ExtractConfig::default());
        let inst = r.instances.iter().find(|i| i.vehicle_id == 2 && i.frame == 60).unwrap();
        assert_eq!(instance_at(&scene, 2, 60, &ExtractConfig::default()).as_ref(), Some(inst));
        assert!(instance_at(&scene, 2, 61, &ExtractConfig::default()).is_some());
        assert!(instance_at(&scene, 2, 29, &ExtractConfig::default()).is_none());
        assert!(instance_at(&scene, 2, 251, &ExtractConfig::default()).is_none());
        assert!(instance_at(&scene, 3, 60, &ExtractConfig::default()).is_none());
    }

    #[test]
    fn history_and_future_lengths_and_origin() {
        let scene = Scene::new("s", vec![straight(1, 0..=300, 6.0, 12.0, 1)]);
        let r = extract_instances(&scene, &ExtractConfig::default());
        assert_eq!(r.instances.len(), 23);
        for inst in &r.instances {
            assert_eq!(inst.history.len(), HISTORY_LEN);
            assert_eq!(inst.future.len(), FUTURE_LEN);
            assert_eq!(inst.history[HISTORY_LEN - 1], [0.0, 0.0]);
            assert_eq!(inst.future[0], [0.0, 10.0]);
            assert_eq!(inst.history[0], [0.0, -150.0]);
        }
    }

    #[test]
    fn neighbor_bounds() {
        let ego = straight(1, 0..=100, 6.0, 0.0, 2);
        let near = straight(2, 0..=100, 18.0, 85.0, 3);
        let far = straight(3, 0..=100, 6.0, 95.0, 2);
        let two_lanes = straight(4, 0..=100, 30.0, 10.0, 4);
        let young = straight(5, 20..=100, -6.0, 10.0, 1);
        let scene = Scene::new("s", vec![ego, near, far, two_lanes, young]);
        let r = extract_instances(&scene, &ExtractConfig::default());
        let inst = r.instances.iter().find(|i| i.vehicle_id == 1).unwrap();
        let ids: Vec<u32> = inst.neighbors.iter().map(|n| n.vehicle_id).collect();
        assert_eq!(ids, vec![2]);
        assert_eq!(inst.neighbors[0].lane_offset, 1);
        assert_eq!(inst.neighbors[0].history[HISTORY_LEN - 1], [12.0, 85.0]);
        assert!(r.dropped_neighbors >= 1);
    }

    #[test]
    fn frame_transform_examples() {
        let ego = Track::new(
            1,
            (0..=80).map(|f| Sample { frame: f, x: 12.3, y: 456.7, lane: 1 }).collect(),
        )
        .unwrap();
        let lead = Track::new(
            2,
            (0..=80).map(|f| Sample { frame: f, x: 12.3, y: 486.7, lane: 1 }).collect(),
        )
        .unwrap();
        let local = to_prediction_frame(&[ego.clone(), lead], 1, 30).unwrap();
        let e = local[0].at(30).unwrap();
        assert_eq!((e.x, e.y), (0.0, 0.0));
        let l = local[1].at(30).unwrap();
        assert_eq!(l.x, 0.0);
        assert!((l.y - 30.0).abs() < 1e-12);
        assert!(to_prediction_frame(&[ego], 1, 31).is_err());
    }
}
