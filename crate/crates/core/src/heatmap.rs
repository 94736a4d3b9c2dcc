//! Predictive-distribution heatmaps evaluated on a regular grid per step.

use serde::{Deserialize, Serialize};

use crate::data::Lateral;
use crate::model::PredictiveDistribution;

pub const HEATMAP_FORMAT: &str = "forecast-heatmap";
pub const TRAJECTORY_FORMAT: &str = "forecast-mode-trajectories";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub cells_x: usize,
    pub cells_y: usize,
    /// Half-width of the automatic extents in standard deviations.
    pub sigmas: f64,
    /// Components lighter than this do not widen the extents.
    pub min_weight: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            cells_x: 80,
            cells_y: 160,
            sigmas: 6.0,
            min_weight: 1e-3,
        }
    }
}

/// Density of one future step over an axis-aligned grid of cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    pub step: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub cell_x: f64,
    pub cell_y: f64,
    pub cells_x: usize,
    pub cells_y: usize,
    /// Row-major over `(iy, ix)`.
    pub density: Vec<f64>,
}

impl StepGrid {
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.x_min + (ix as f64 + 0.5) * self.cell_x, self.y_min + (iy as f64 + 0.5) * self.cell_y)
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.density[iy * self.cells_x + ix]
    }

    /// Σ density × cell area.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_x * self.cell_y
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for i in 1..self.density.len() {
            if self.density[i] > self.density[best] {
                best = i;
            }
        }
        (best % self.cells_x, best / self.cells_x)
    }

    /// Cells strictly greater than their 8-neighborhood and carrying at
    /// least `rel` of the grid maximum.
    pub fn local_maxima(&self, rel: f64) -> Vec<(usize, usize)> {
        let peak = self.density.iter().copied().fold(0.0, f64::max);
        let mut out = Vec::new();
        for iy in 0..self.cells_y {
            for ix in 0..self.cells_x {
                let v = self.at(ix, iy);
                if v <= 0.0 || v < rel * peak {
                    continue;
                }
                let mut is_max = true;
                'scan: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= self.cells_x as i64 || ny >= self.cells_y as i64 {
                            continue;
                        }
                        if self.at(nx as usize, ny as usize) >= v {
                            is_max = false;
                            break 'scan;
                        }
                    }
                }
                if is_max {
                    out.push((ix, iy));
                }
            }
        }
        out
    }

    /// Whether two local maxima lie at least `min_dx` feet apart laterally.
    pub fn has_lateral_modes(&self, rel: f64, min_dx: f64) -> bool {
        let xs: Vec<f64> = self.local_maxima(rel).into_iter().map(|(ix, iy)| self.center(ix, iy).0).collect();
        xs.iter().any(|a| xs.iter().any(|b| (a - b).abs() >= min_dx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTrajectory {
    pub maneuver: Option<String>,
    pub weight: f64,
    pub means: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub steps: Vec<StepGrid>,
    pub weights: Vec<f64>,
    pub trajectories: Vec<ModeTrajectory>,
}

impl HeatmapGrid {
    /// Steps whose whole grid carries essentially no mass.
    pub fn empty_steps(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.mass() < 1e-6).map(|s| s.step).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {HEATMAP_FORMAT} v1\nstep,x_ft,y_ft,density\n");
        for s in &self.steps {
            for iy in 0..s.cells_y {
                for ix in 0..s.cells_x {
                    let (x, y) = s.center(ix, iy);
                    out.push_str(&format!("{},{:?},{:?},{:?}\n", s.step + 1, x, y, s.at(ix, iy)));
                }
            }
        }
        out
    }

    pub fn trajectories_csv(&self) -> String {
        let mut out = format!("# {TRAJECTORY_FORMAT} v1\nmaneuver,weight,step,x_ft,y_ft\n");
        for t in &self.trajectories {
            let name = t.maneuver.clone().unwrap_or_else(|| "single".into());
            for (k, m) in t.means.iter().enumerate() {
                out.push_str(&format!("{name},{:?},{},{:?},{:?}\n", t.weight, k + 1, m[0], m[1]));
            }
        }
        out
    }
}

fn maneuver_name(m: Option<(Lateral, crate::data::Longitudinal)>) -> Option<String> {
    m.map(|(a, b)| format!("{a:?}/{b:?}"))
}

/// Density of future step `step` on a grid spanning `spec.sigmas` standard
/// deviations around every component heavier than `spec.min_weight`.
pub fn heatmap_step(pred: &PredictiveDistribution, spec: &HeatmapSpec, step: usize) -> StepGrid {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in pred.components.iter().filter(|c| c.weight >= spec.min_weight) {
        let g = c.sequence.steps[step];
        x0 = x0.min(g.mu_x - spec.sigmas * g.sigma_x);
        x1 = x1.max(g.mu_x + spec.sigmas * g.sigma_x);
        y0 = y0.min(g.mu_y - spec.sigmas * g.sigma_y);
        y1 = y1.max(g.mu_y + spec.sigmas * g.sigma_y);
    }
    let mut grid = StepGrid {
        step,
        x_min: x0,
        y_min: y0,
        cell_x: (x1 - x0) / spec.cells_x as f64,
        cell_y: (y1 - y0) / spec.cells_y as f64,
        cells_x: spec.cells_x,
        cells_y: spec.cells_y,
        density: Vec::with_capacity(spec.cells_x * spec.cells_y),
    };
    for iy in 0..spec.cells_y {
        for ix in 0..spec.cells_x {
            let (x, y) = grid.center(ix, iy);
            grid.density.push(pred.density(step, x, y));
        }
    }
    grid
}

/// Evaluates the mixture density at every cell center of an automatically
/// sized grid for each future step.
pub fn heatmap(pred: &PredictiveDistribution, spec: &HeatmapSpec) -> HeatmapGrid {
    let steps = (0..pred.horizon()).map(|k| heatmap_step(pred, spec, k)).collect();
    HeatmapGrid {
        steps,
        weights: pred.components.iter().map(|c| c.weight).collect(),
        trajectories: pred
            .components
            .iter()
            .map(|c| ModeTrajectory {
                maneuver: maneuver_name(c.maneuver),
                weight: c.weight,
                means: c.sequence.means(),
            })
            .collect(),
    }
}
