use serde::{Deserialize, Serialize};

use super::DataError;

/// Native NGSIM sampling rate.
pub const FRAME_RATE_HZ: f64 = 10.0;
pub const FRAME_DT: f64 = 1.0 / FRAME_RATE_HZ;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub frame: u32,
    /// Lateral position, feet, increasing to the right of travel.
    pub x: f64,
    /// Longitudinal position, feet, increasing along travel.
    pub y: f64,
    /// Lane number, 1 = leftmost.
    pub lane: u32,
}

/// One vehicle's time-ordered samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub vehicle_id: u32,
    samples: Vec<Sample>,
}

impl Track {
    pub fn new(vehicle_id: u32, samples: Vec<Sample>) -> Result<Self, DataError> {
        if let Some(w) = samples.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(DataError::InvalidTrack {
                vehicle_id,
                reason: format!("frame {} follows {}", w[1].frame, w[0].frame),
            });
        }
        if let Some(s) = samples.iter().find(|s| s.lane == 0) {
            return Err(DataError::InvalidTrack {
                vehicle_id,
                reason: format!("lane 0 at frame {}", s.frame),
            });
        }
        if samples.is_empty() {
            return Err(DataError::InvalidTrack {
                vehicle_id,
                reason: "no samples".into(),
            });
        }
        Ok(Track { vehicle_id, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn first_frame(&self) -> u32 {
        self.samples[0].frame
    }

    pub fn last_frame(&self) -> u32 {
        self.samples[self.samples.len() - 1].frame
    }

    pub fn at(&self, frame: u32) -> Option<&Sample> {
        // Fast path for gap-free tracks.
        let guess = frame.checked_sub(self.first_frame())? as usize;
        if let Some(s) = self.samples.get(guess) {
            if s.frame == frame {
                return Some(s);
            }
        }
        self.samples
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| &self.samples[i])
    }

    /// True when every frame in `[from, to]` has a sample.
    pub fn covers(&self, from: u32, to: u32) -> bool {
        let (Some(a), Some(b)) = (self.index_of(from), self.index_of(to)) else {
            return false;
        };
        (b - a) as u32 == to - from
    }

    fn index_of(&self, frame: u32) -> Option<usize> {
        self.samples.binary_search_by_key(&frame, |s| s.frame).ok()
    }
}
