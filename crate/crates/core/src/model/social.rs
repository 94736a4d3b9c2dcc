use crate::data::Neighbor;

use super::ModelError;

pub const GRID_ROWS: usize = 13;
pub const GRID_COLS: usize = 3;
pub const GRID_CELLS: usize = GRID_ROWS * GRID_COLS;
/// Longitudinal extent of one grid row, feet.
pub const ROW_FT: f64 = 15.0;
/// Longitudinal reach of the grid either side of the ego, feet.
pub const GRID_REACH_FT: f64 = 90.0;
pub const CENTER_ROW: usize = GRID_ROWS / 2;
pub const EGO_LANE_COL: usize = 1;

/// Cell of a neighbor at lane offset `dlane` and longitudinal offset `dy`.
/// Rows count from the rear (row 0) to the front (row 12); columns are
/// left, ego lane and right.
pub fn grid_index(dlane: i32, dy: f64) -> Option<(usize, usize)> {
    if dlane.abs() > 1 || !dy.is_finite() || dy.abs() > GRID_REACH_FT {
        return None;
    }
    let row = (dy / ROW_FT).round() as i64 + CENTER_ROW as i64;
    if !(0..GRID_ROWS as i64).contains(&row) {
        return None;
    }
    Some((row as usize, (dlane + 1) as usize))
}

pub fn cell_number(row: usize, col: usize) -> usize {
    row * GRID_COLS + col
}

/// For each cell (row-major), the index into `neighbors` of its occupant.
/// Contested cells go to the neighbor with the smallest `|dy|`, then the
/// smaller vehicle id, so the result does not depend on input order.
pub fn occupancy(neighbors: &[Neighbor]) -> [Option<usize>; GRID_CELLS] {
    let mut cells: [Option<usize>; GRID_CELLS] = [None; GRID_CELLS];
    for (i, n) in neighbors.iter().enumerate() {
        let Some((r, c)) = grid_index(n.lane_offset, n.dy) else {
            continue;
        };
        let slot = &mut cells[cell_number(r, c)];
        let wins = match *slot {
            None => true,
            Some(j) => {
                let o = &neighbors[j];
                (n.dy.abs(), n.vehicle_id) < (o.dy.abs(), o.vehicle_id)
            }
        };
        if wins {
            *slot = Some(i);
        }
    }
    cells
}

/// Rows occupied in the ego lane after collision resolution.
pub fn ego_lane_rows(neighbors: &[Neighbor]) -> Vec<usize> {
    let cells = occupancy(neighbors);
    (0..GRID_ROWS).filter(|&r| cells[cell_number(r, EGO_LANE_COL)].is_some()).collect()
}

/// A neighbor's encoder state and position relative to the ego.
#[derive(Debug, Clone, Copy)]
pub struct NeighborState<'a> {
    pub vehicle_id: u32,
    pub lane_offset: i32,
    pub dy: f64,
    pub state: &'a [f64],
}

/// 13×3 grid of encoder states; empty cells read as zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialTensor {
    dim: usize,
    cells: Vec<Option<Vec<f64>>>,
}

impl SocialTensor {
    pub fn empty(dim: usize) -> Self {
        SocialTensor {
            dim,
            cells: vec![None; GRID_CELLS],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&[f64]> {
        self.cells[cell_number(row, col)].as_deref()
    }

    pub fn set(&mut self, row: usize, col: usize, state: Vec<f64>) -> Result<(), ModelError> {
        if state.len() != self.dim {
            return Err(ModelError::Input(format!("state of length {} in a {}-dim social tensor", state.len(), self.dim)));
        }
        if row >= GRID_ROWS || col >= GRID_COLS {
            return Err(ModelError::Input(format!("cell ({row}, {col}) outside the grid")));
        }
        self.cells[cell_number(row, col)] = Some(state);
        Ok(())
    }

    pub fn occupied(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .map(|(i, _)| (i / GRID_COLS, i % GRID_COLS))
    }

    /// Channel-major layout `[dim, 13, 3]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * GRID_CELLS];
        for (cell, state) in self.cells.iter().enumerate() {
            if let Some(s) = state {
                for (ch, v) in s.iter().enumerate() {
                    out[ch * GRID_CELLS + cell] = *v;
                }
            }
        }
        out
    }
}

/// Places neighbor states into the grid using the same collision rule as
/// [`occupancy`].
pub fn build_social_tensor(dim: usize, neighbors: &[NeighborState]) -> Result<SocialTensor, ModelError> {
    let mut best: [Option<usize>; GRID_CELLS] = [None; GRID_CELLS];
    for (i, n) in neighbors.iter().enumerate() {
        if n.state.len() != dim {
            return Err(ModelError::Input(format!("neighbor {} state has length {}, expected {dim}", n.vehicle_id, n.state.len())));
        }
        let Some((r, c)) = grid_index(n.lane_offset, n.dy) else {
            continue;
        };
        let slot = &mut best[cell_number(r, c)];
        let wins = slot.is_none_or(|j| {
            let o = &neighbors[j];
            (n.dy.abs(), n.vehicle_id) < (o.dy.abs(), o.vehicle_id)
        });
        if wins {
            *slot = Some(i);
        }
    }
    let mut t = SocialTensor::empty(dim);
    for (cell, who) in best.iter().enumerate() {
        if let Some(i) = who {
            t.cells[cell] = Some(neighbors[*i].state.to_vec());
        }
    }
    Ok(t)
}
