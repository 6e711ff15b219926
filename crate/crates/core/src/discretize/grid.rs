use serde::Serialize;

use super::DiscretizeError;
use crate::problem::{Point, ProblemSpec};

/// Interior lattice of a box with uniform spacing `h`. Nodes are numbered
/// with the first axis running fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    h: f64,
    lo: Point,
    counts: [usize; 2],
}

/// Builds the interior grid of `problem`'s box; `h` must divide every side.
pub fn build_grid(problem: &ProblemSpec, h: f64) -> Result<Grid, DiscretizeError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(DiscretizeError::NonconformingSpacing { h, side: f64::NAN });
    }
    let mut counts = [1usize; 2];
    let mut lo = [0.0; 2];
    for k in 0..problem.dim {
        let side = problem.side_length(k);
        let cells = side / h;
        let rounded = cells.round();
        if rounded < 2.0 || (cells - rounded).abs() > 1e-9 * rounded {
            return Err(DiscretizeError::NonconformingSpacing { h, side });
        }
        counts[k] = rounded as usize - 1;
        lo[k] = problem.bounds[k][0];
    }
    Ok(Grid { dim: problem.dim, h, lo, counts })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Interior node count per axis.
    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn n(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    #[inline]
    pub fn index(&self, lattice: [usize; 2]) -> usize {
        lattice[0] + self.counts[0] * lattice[1]
    }

    #[inline]
    pub fn lattice(&self, node: usize) -> [usize; 2] {
        [node % self.counts[0], node / self.counts[0]]
    }

    #[inline]
    pub fn coords(&self, node: usize) -> Point {
        let l = self.lattice(node);
        let mut p = [0.0; 2];
        for k in 0..self.dim {
            p[k] = self.lo[k] + (l[k] + 1) as f64 * self.h;
        }
        p
    }

    pub fn all_coords(&self) -> Vec<Point> {
        (0..self.n()).map(|i| self.coords(i)).collect()
    }

    /// Neighbor one step along `axis` in direction `dir` (`+1` or `-1`),
    /// or `None` if that step lands on the boundary.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, dir: i32) -> Option<usize> {
        let mut l = self.lattice(node);
        if dir > 0 {
            if l[axis] + 1 >= self.counts[axis] {
                return None;
            }
            l[axis] += 1;
        } else {
            if l[axis] == 0 {
                return None;
            }
            l[axis] -= 1;
        }
        Some(self.index(l))
    }

    /// Stencil offsets `(axis, dir)` of `node` that exit the domain.
    pub fn boundary_adjacency(&self, node: usize) -> Vec<(usize, i32)> {
        let mut out = Vec::new();
        for axis in 0..self.dim {
            for dir in [-1, 1] {
                if self.neighbor(node, axis, dir).is_none() {
                    out.push((axis, dir));
                }
            }
        }
        out
    }

    pub fn is_boundary_adjacent(&self, node: usize) -> bool {
        let l = self.lattice(node);
        (0..self.dim).any(|k| l[k] == 0 || l[k] + 1 == self.counts[k])
    }

    /// Distance to the boundary in lattice steps (1 for boundary-adjacent
    /// nodes).
    pub fn layer(&self, node: usize) -> usize {
        let l = self.lattice(node);
        (0..self.dim).map(|k| (l[k] + 1).min(self.counts[k] - l[k])).min().unwrap_or(0)
    }

    pub fn dist_to_boundary(&self, node: usize) -> f64 {
        self.layer(node) as f64 * self.h
    }

    /// Mask of the nodes of `D_eps`, the points at distance `> eps` from
    /// the boundary.
    pub fn inner_mask(&self, eps: f64) -> Vec<bool> {
        (0..self.n()).map(|i| self.dist_to_boundary(i) > eps * (1.0 + 1e-12)).collect()
    }

    /// Lattice offset of `inner`'s nodes within this grid, if `inner` has
    /// the same spacing and sits on this grid's lattice.
    pub fn embedding_of(&self, inner: &Grid) -> Option<[usize; 2]> {
        if inner.dim != self.dim || (inner.h - self.h).abs() > 1e-12 * self.h {
            return None;
        }
        let mut off = [0usize; 2];
        for k in 0..self.dim {
            let shift = (inner.lo[k] - self.lo[k]) / self.h;
            let r = shift.round();
            if r < 0.0 || (shift - r).abs() > 1e-9 || r as usize + inner.counts[k] > self.counts[k] {
                return None;
            }
            off[k] = r as usize;
        }
        Some(off)
    }

    /// Nearest node to an arbitrary point of the box.
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut l = [0usize; 2];
        for k in 0..self.dim {
            let f = ((x[k] - self.lo[k]) / self.h).round() - 1.0;
            l[k] = f.clamp(0.0, (self.counts[k] - 1) as f64) as usize;
        }
        self.index(l)
    }

    /// Lower corner of the enclosing box.
    pub fn lower(&self) -> Point {
        self.lo
    }
}
