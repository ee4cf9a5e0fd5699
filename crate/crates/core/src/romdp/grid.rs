use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform grid over the action box: `cells_per_dim` cells in each of up to
/// three dimensions. The reduced action is the flat index of the cell whose
/// center is nearest; dimension 0 varies fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionGrid {
    low: Vec<f64>,
    high: Vec<f64>,
    cells_per_dim: usize,
}

impl ActionGrid {
    pub fn new(low: Vec<f64>, high: Vec<f64>, cells_per_dim: usize) -> Result<ActionGrid> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::Config("action bounds dimension mismatch".into()));
        }
        if low.len() > 3 {
            return Err(Error::Config(format!(
                "action dimension {} not supported (direct grid discretization needs <= 3)",
                low.len()
            )));
        }
        if cells_per_dim == 0 {
            return Err(Error::Config("cells_per_dim must be positive".into()));
        }
        for d in 0..low.len() {
            if !(low[d] < high[d]) || !low[d].is_finite() || !high[d].is_finite() {
                return Err(Error::Config(format!(
                    "degenerate action bounds in dimension {d}"
                )));
            }
        }
        Ok(ActionGrid {
            low,
            high,
            cells_per_dim,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.low.len()
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells_per_dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_dim.pow(self.n_dims() as u32)
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.low, &self.high)
    }

    fn width(&self, d: usize) -> f64 {
        (self.high[d] - self.low[d]) / self.cells_per_dim as f64
    }

    /// Cell containing `action`; out-of-bounds coordinates clamp to the
    /// nearest cell, so the map is total. Equivalent to the nearest cell
    /// center in Euclidean distance.
    pub fn cell_index(&self, action: &[f64]) -> Result<usize> {
        if action.len() != self.n_dims() {
            return Err(Error::ShapeMismatch {
                expected: self.n_dims(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite { what: "action" });
        }
        let mut idx = 0usize;
        let mut stride = 1usize;
        for d in 0..self.n_dims() {
            let w = self.width(d);
            let i = ((action[d] - self.low[d]) / w).floor() as i64;
            let i = i.clamp(0, self.cells_per_dim as i64 - 1) as usize;
            idx += i * stride;
            stride *= self.cells_per_dim;
        }
        Ok(idx)
    }

    /// Closed-form center of a cell.
    pub fn center(&self, index: usize) -> Vec<f64> {
        assert!(index < self.n_cells());
        let mut rest = index;
        (0..self.n_dims())
            .map(|d| {
                let i = rest % self.cells_per_dim;
                rest /= self.cells_per_dim;
                self.low[d] + (i as f64 + 0.5) * self.width(d)
            })
            .collect()
    }

    /// Axis-aligned box of a cell.
    pub fn cell_box(&self, index: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(index < self.n_cells());
        let mut rest = index;
        let mut lo = Vec::with_capacity(self.n_dims());
        let mut hi = Vec::with_capacity(self.n_dims());
        for d in 0..self.n_dims() {
            let i = rest % self.cells_per_dim;
            rest /= self.cells_per_dim;
            lo.push(self.low[d] + i as f64 * self.width(d));
            hi.push(self.low[d] + (i + 1) as f64 * self.width(d));
        }
        (lo, hi)
    }

    /// Euclidean projection of `point` onto a cell box, kept strictly below
    /// the cell's interior upper faces: an exact upper-face point would be
    /// assigned to the neighboring cell by `cell_index`, so the projection
    /// backs off by a relative margin that is negligible against any
    /// distance tolerance but keeps the cell map consistent.
    pub fn project_into_cell(&self, index: usize, point: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.cell_box(index);
        let mut rest = index;
        point
            .iter()
            .enumerate()
            .map(|(d, &p)| {
                let cell_in_dim = rest % self.cells_per_dim;
                rest /= self.cells_per_dim;
                let top_cell = cell_in_dim + 1 == self.cells_per_dim;
                let upper = if top_cell {
                    hi[d]
                } else {
                    hi[d] - (hi[d] - lo[d]) * 1e-9
                };
                p.clamp(lo[d], upper)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn grid3x3() -> ActionGrid {
        ActionGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], 3).unwrap()
    }

    /// Brute-force nearest-center scan; the oracle for `cell_index`.
    fn nearest_center(grid: &ActionGrid, action: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..grid.n_cells() {
            let center = grid.center(c);
            let d: f64 = center
                .iter()
                .zip(action.iter())
                .map(|(c, a)| (c - a) * (c - a))
                .sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    #[test]
    fn center_action_maps_to_middle_cell() {
        // 3x3 grid: the middle cell is index 4 (fifth cell in reading order).
        let grid = grid3x3();
        assert_eq!(grid.cell_index(&[0.0, 0.0]).unwrap(), 4);
    }

    #[test]
    fn corner_actions_map_to_first_and_last_cells() {
        let grid = grid3x3();
        assert_eq!(grid.cell_index(&[-0.9, -0.9]).unwrap(), 0);
        assert_eq!(grid.cell_index(&[0.9, 0.9]).unwrap(), 8);
    }

    #[test]
    fn matches_exhaustive_argmin_on_random_actions() {
        let grid = grid3x3();
        let mut rng = stream(17, 0);
        for _ in 0..10_000 {
            let a = [rng.random_range(-1.3..1.3), rng.random_range(-1.3..1.3)];
            let got = grid.cell_index(&a).unwrap();
            // for in-bounds actions the oracle is exact; out-of-bounds clamp
            // to the nearest cell which is also the nearest center
            assert_eq!(got, nearest_center(&grid, &a), "action {a:?}");
        }
    }

    #[test]
    fn three_dims_supported_four_rejected() {
        assert!(ActionGrid::new(vec![-1.0; 3], vec![1.0; 3], 2).is_ok());
        assert!(ActionGrid::new(vec![-1.0; 4], vec![1.0; 4], 2).is_err());
    }

    #[test]
    fn non_finite_action_rejected() {
        let grid = grid3x3();
        assert!(grid.cell_index(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn projection_stays_inside_cell() {
        let grid = grid3x3();
        let p = grid.project_into_cell(4, &[0.9, -0.9]);
        let (lo, hi) = grid.cell_box(4);
        for d in 0..2 {
            assert!(p[d] >= lo[d] && p[d] <= hi[d]);
        }
        // projecting a point already inside is the identity
        let q = grid.project_into_cell(4, &[0.1, -0.2]);
        assert_eq!(q, vec![0.1, -0.2]);
    }

    #[test]
    fn projection_lands_in_its_own_cell() {
        let grid = grid3x3();
        let mut rng = stream(19, 0);
        for _ in 0..2000 {
            let p = [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
            for c in 0..grid.n_cells() {
                let proj = grid.project_into_cell(c, &p);
                assert_eq!(grid.cell_index(&proj).unwrap(), c, "point {p:?} cell {c}");
            }
        }
    }
}
