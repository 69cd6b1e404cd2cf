//! Periodic one-dimensional meshes of `[0, L]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    length: f64,
    nodes: Vec<f64>,
    uniform: bool,
}

impl Mesh {
    /// `cells` equal cells covering `[0, length]`.
    pub fn uniform(length: f64, cells: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::config("length", format!("must be positive, got {length}")));
        }
        if cells < 2 {
            return Err(Error::config("cells", format!("need at least 2 cells, got {cells}")));
        }
        let h = length / cells as f64;
        let mut nodes: Vec<f64> = (0..cells).map(|m| m as f64 * h).collect();
        nodes.push(length);
        Ok(Mesh {
            length,
            nodes,
            uniform: true,
        })
    }

    /// Mesh from explicit nodes `0 = x_0 < ... < x_M = L`. Adjacent cell sizes
    /// (including the wrap-around pair) must have ratio within `[1/ratio, ratio]`.
    pub fn from_nodes(nodes: Vec<f64>, ratio: f64) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::config("nodes", "need at least 2 cells"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::config("nodes", "first node must be 0"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("nodes", "nodes must be strictly increasing"));
        }
        if !(ratio >= 1.0) {
            return Err(Error::config("ratio", "ratio bound must be at least 1"));
        }
        let sizes: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        let m = sizes.len();
        for i in 0..m {
            let r = sizes[i] / sizes[(i + 1) % m];
            if r > ratio || r < 1.0 / ratio {
                return Err(Error::config(
                    "nodes",
                    format!("cells {i} and {} have size ratio {r}, outside the bound {ratio}", (i + 1) % m),
                ));
            }
        }
        let length = *nodes.last().unwrap();
        let h0 = sizes[0];
        let uniform = sizes.iter().all(|&h| (h - h0).abs() <= 1e-14 * length);
        Ok(Mesh {
            length,
            nodes,
            uniform,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn cell_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        (self.nodes[cell], self.nodes[cell + 1])
    }

    pub fn cell_size(&self, cell: usize) -> f64 {
        self.nodes[cell + 1] - self.nodes[cell]
    }

    pub fn max_cell_size(&self) -> f64 {
        (0..self.cell_count())
            .map(|m| self.cell_size(m))
            .fold(0.0, f64::max)
    }

    /// Reduces `x` modulo `L` into `[0, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let r = x.rem_euclid(self.length);
        if r >= self.length {
            0.0
        } else {
            r
        }
    }

    /// Cell containing `x` (after periodic reduction) and the reference
    /// coordinate in `[0, 1)`. Cells are left-closed, so a mesh node belongs
    /// to the cell on its right.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let x = self.wrap(x);
        let m = self.cell_count();
        let cell = if self.uniform {
            ((x / self.length * m as f64).floor() as usize).min(m - 1)
        } else {
            self.nodes.partition_point(|&n| n <= x).saturating_sub(1).min(m - 1)
        };
        // Guard against floating-point rounding placing x just outside the cell.
        let cell = if x < self.nodes[cell] {
            cell.saturating_sub(1)
        } else if x >= self.nodes[cell + 1] && cell + 1 < m {
            cell + 1
        } else {
            cell
        };
        let (a, b) = self.cell_bounds(cell);
        (cell, ((x - a) / (b - a)).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_four_cells() {
        let m = Mesh::uniform(1.0, 4).unwrap();
        assert_eq!(m.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(m.is_uniform());
    }

    #[test]
    fn test_one_mesh_size() {
        let m = Mesh::uniform(40.0, 160).unwrap();
        for c in 0..m.cell_count() {
            assert!((m.cell_size(c) - 0.25).abs() < 1e-13);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(Mesh::uniform(40.0, 0).is_err());
        assert!(Mesh::uniform(40.0, 1).is_err());
        assert!(Mesh::uniform(0.0, 10).is_err());
        assert!(Mesh::uniform(-1.0, 10).is_err());
    }

    #[test]
    fn graded_mesh_ratio_bound() {
        assert!(Mesh::from_nodes(vec![0.0, 1.0, 3.0, 4.0], 2.0).is_ok());
        assert!(Mesh::from_nodes(vec![0.0, 1.0, 4.0, 5.0], 2.0).is_err());
        assert!(Mesh::from_nodes(vec![0.0, 2.0, 1.0, 4.0], 2.0).is_err());
    }

    #[test]
    fn locate_is_left_closed_and_periodic() {
        let m = Mesh::uniform(40.0, 160).unwrap();
        assert_eq!(m.locate(10.0), (40, 0.0));
        assert_eq!(m.locate(40.0), (0, 0.0));
        assert_eq!(m.locate(-0.125), (159, 0.5));
        let g = Mesh::from_nodes(vec![0.0, 1.0, 2.5, 4.0], 2.0).unwrap();
        assert_eq!(g.locate(2.5), (2, 0.0));
        assert_eq!(g.locate(1.75).0, 1);
    }
}
