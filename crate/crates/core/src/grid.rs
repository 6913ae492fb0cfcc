//! Uniform tensor grids on centered boxes `[-L, L]^d`.
//!
//! Nodes sit at cell midpoints, `x_i = -L + (i + 1/2) h` per axis with
//! `h = 2L / M`, so every quadrature in this crate is the midpoint rule and
//! matches the implicit quadrature of the discrete Fourier transform.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Hard cap on total node count (memory guard: 2^24 f64 values = 128 MiB).
pub const MAX_NODES: usize = 1 << 24;

/// A uniform midpoint grid on `[-half_width, half_width]^dimension`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dimension: usize,
    half_width: f64,
    points_per_axis: usize,
}

impl Grid {
    /// `points_per_axis` must be even so the frequency grid is symmetric.
    pub fn new(dimension: usize, half_width: f64, points_per_axis: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::parameter("dimension", "must be at least 1"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::parameter("half_width", "must be finite and positive"));
        }
        if points_per_axis == 0 || points_per_axis % 2 != 0 {
            return Err(Error::parameter(
                "points_per_axis",
                format!("must be even and positive, got {points_per_axis}"),
            ));
        }
        let mut nodes: usize = 1;
        for _ in 0..dimension {
            nodes = nodes
                .checked_mul(points_per_axis)
                .filter(|&n| n <= MAX_NODES)
                .ok_or_else(|| {
                    Error::parameter(
                        "points_per_axis",
                        format!("{points_per_axis}^{dimension} nodes exceeds budget {MAX_NODES}"),
                    )
                })?;
        }
        Ok(Grid {
            dimension,
            half_width,
            points_per_axis,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Node spacing `h = 2L / M`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// Quadrature weight `h^d` of one node.
    pub fn node_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn node_count(&self) -> usize {
        self.points_per_axis.pow(self.dimension as u32)
    }

    /// Coordinate of node `i` along one axis.
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Decode a row-major flat index into per-axis indices.
    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.dimension);
        let mut rem = flat;
        for axis in (0..self.dimension).rev() {
            out[axis] = rem % self.points_per_axis;
            rem /= self.points_per_axis;
        }
    }

    /// Encode per-axis indices into a row-major flat index.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        for &i in multi {
            debug_assert!(i < self.points_per_axis);
            flat = flat * self.points_per_axis + i;
        }
        flat
    }

    /// Coordinates of the node with the given flat index.
    pub fn node_coords(&self, flat: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dimension);
        let mut rem = flat;
        for axis in (0..self.dimension).rev() {
            out[axis] = self.axis_coord(rem % self.points_per_axis);
            rem /= self.points_per_axis;
        }
    }

    /// Visit every node as `(flat_index, coords)`.
    pub fn for_each_node(&self, mut f: impl FnMut(usize, &[f64])) {
        let mut coords = vec![0.0; self.dimension];
        for flat in 0..self.node_count() {
            self.node_coords(flat, &mut coords);
            f(flat, &coords);
        }
    }

    /// Whether `x` lies in the closed box `[-L, L]^d`.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension && x.iter().all(|&c| c.abs() <= self.half_width)
    }

    /// Flat index of the grid cell containing `x` (nodes are cell centers).
    pub fn cell_index(&self, x: &[f64]) -> Result<usize> {
        if !self.contains(x) {
            return Err(Error::Domain(format!(
                "point {x:?} outside box of half-width {}",
                self.half_width
            )));
        }
        let h = self.spacing();
        let m = self.points_per_axis;
        let mut flat = 0;
        for &c in x {
            let i = (((c + self.half_width) / h).floor() as isize).clamp(0, m as isize - 1);
            flat = flat * m + i as usize;
        }
        Ok(flat)
    }

    /// Multilinear interpolation of node values at `x`.
    ///
    /// `x` must lie in the box; within the half-cell fringe outside the node
    /// hull the interpolant is clamped to the edge nodes.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Result<f64> {
        if values.len() != self.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for grid with {} nodes",
                values.len(),
                self.node_count()
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!(
                "point {x:?} outside box of half-width {}",
                self.half_width
            )));
        }
        let h = self.spacing();
        let m = self.points_per_axis;
        let d = self.dimension;
        // Lower node index and weight per axis, clamped to the node hull.
        let mut lo = vec![0usize; d];
        let mut w = vec![0.0f64; d];
        for (axis, &c) in x.iter().enumerate() {
            let t = (c + self.half_width) / h - 0.5;
            let t = t.clamp(0.0, (m - 1) as f64);
            let i0 = (t.floor() as usize).min(m - 2);
            lo[axis] = i0;
            w[axis] = t - i0 as f64;
        }
        // Sum over the 2^d corners of the surrounding cell.
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut flat = 0;
            for axis in 0..d {
                let up = (corner >> axis) & 1 == 1;
                weight *= if up { w[axis] } else { 1.0 - w[axis] };
                flat = flat * m + lo[axis] + usize::from(up);
            }
            if weight != 0.0 {
                acc += weight * values[flat];
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(0, 1.0, 4).is_err());
        assert!(Grid::new(1, 0.0, 4).is_err());
        assert!(Grid::new(1, 1.0, 5).is_err());
        assert!(Grid::new(3, 1.0, 1024).is_err()); // node budget
    }

    #[test]
    fn midpoint_nodes_are_symmetric() {
        let g = Grid::new(1, 2.0, 8).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.axis_coord(0), -1.75);
        assert_eq!(g.axis_coord(7), 1.75);
        // no node at the origin or on the boundary
        for i in 0..8 {
            let c = g.axis_coord(i);
            assert!(c.abs() > 0.0 && c.abs() < 2.0);
            assert_eq!(c, -g.axis_coord(7 - i));
        }
    }

    #[test]
    fn flat_and_multi_index_round_trip() {
        let g = Grid::new(3, 1.0, 4).unwrap();
        let mut multi = [0usize; 3];
        for flat in 0..g.node_count() {
            g.multi_index(flat, &mut multi);
            assert_eq!(g.flat_index(&multi), flat);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = Grid::new(2, 1.5, 16).unwrap();
        let f = |x: &[f64]| 0.7 + 1.3 * x[0] - 2.1 * x[1];
        let mut values = vec![0.0; g.node_count()];
        let mut coords = vec![0.0; 2];
        for i in 0..g.node_count() {
            g.node_coords(i, &mut coords);
            values[i] = f(&coords);
        }
        // exact for multilinear functions at interior points
        for &p in &[[0.3, -0.9], [1.0, 1.0], [-1.3, 0.2]] {
            let got = g.interpolate(&values, &p).unwrap();
            assert!((got - f(&p)).abs() < 1e-12, "{got} vs {}", f(&p));
        }
        assert!(g.interpolate(&values, &[2.0, 0.0]).is_err());
    }

    #[test]
    fn cell_index_matches_nearest_node() {
        let g = Grid::new(1, 1.0, 4).unwrap(); // nodes -0.75 -0.25 0.25 0.75
        assert_eq!(g.cell_index(&[-0.9]).unwrap(), 0);
        assert_eq!(g.cell_index(&[-0.01]).unwrap(), 1);
        assert_eq!(g.cell_index(&[0.01]).unwrap(), 2);
        assert_eq!(g.cell_index(&[1.0]).unwrap(), 3);
        assert!(g.cell_index(&[1.01]).is_err());
    }
}
