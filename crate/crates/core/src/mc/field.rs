use crate::discretize::Grid;
use crate::problem::Point;

/// Multilinear interpolation of a node field. Past the outermost interior
/// nodes the field takes `boundary` on the box boundary, or, with `None`,
/// the value of the nearest interior node.
#[derive(Debug, Clone)]
pub struct GridInterpolant {
    dim: usize,
    h: f64,
    lo: Point,
    counts: [usize; 2],
    values: Vec<f64>,
    boundary: Option<f64>,
}

impl GridInterpolant {
    pub fn new(grid: &Grid, values: Vec<f64>, boundary: Option<f64>) -> Self {
        assert_eq!(values.len(), grid.n());
        GridInterpolant { dim: grid.dim(), h: grid.h(), lo: grid.lower(), counts: grid.counts(), values, boundary }
    }

    /// Value at extended lattice index `l`, where `-1` and `counts` are the
    /// boundary.
    #[inline]
    fn at(&self, l: [i64; 2]) -> f64 {
        let mut idx = [0usize; 2];
        for k in 0..self.dim {
            let c = self.counts[k] as i64;
            if l[k] < 0 || l[k] >= c {
                if let Some(b) = self.boundary {
                    return b;
                }
            }
            idx[k] = l[k].clamp(0, c - 1) as usize;
        }
        self.values[idx[0] + self.counts[0] * idx[1]]
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        let mut base = [0i64; 2];
        let mut frac = [0.0; 2];
        for k in 0..self.dim {
            let c = self.counts[k] as f64;
            let s = ((x[k] - self.lo[k]) / self.h - 1.0).clamp(-1.0, c);
            let b = s.floor().min(c - 1.0);
            base[k] = b as i64;
            frac[k] = s - b;
        }
        if self.dim == 1 {
            let (a, b) = (self.at([base[0], 0]), self.at([base[0] + 1, 0]));
            return a + frac[0] * (b - a);
        }
        let mut acc = 0.0;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            if wx * wy != 0.0 {
                acc += wx * wy * self.at([base[0] + dx, base[1] + dy]);
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::build_grid;
    use crate::problem::{bm_interval, rect_2d};

    #[test]
    fn reproduces_nodes_and_linear_fields() {
        let p = rect_2d(1.0);
        let g = build_grid(&p, 0.125).unwrap();
        let f: Vec<f64> = g.all_coords().iter().map(|x| 2.0 * x[0] - 3.0 * x[1] + 0.5).collect();
        let it = GridInterpolant::new(&g, f.clone(), None);
        for (i, x) in g.all_coords().iter().enumerate() {
            assert!((it.eval(x) - f[i]).abs() < 1e-12);
        }
        let x = [0.3, 0.71];
        assert!((it.eval(&x) - (2.0 * 0.3 - 3.0 * 0.71 + 0.5)).abs() < 1e-12);
        // constant extension past the last node
        assert!((it.eval(&[0.99, 0.5]) - it.eval(&[0.875, 0.5])).abs() < 1e-12);
    }

    #[test]
    fn zero_boundary_extension() {
        let p = bm_interval();
        let g = build_grid(&p, 0.25).unwrap();
        let it = GridInterpolant::new(&g, vec![1.0, 2.0, 1.0], Some(0.0));
        assert_eq!(it.eval(&[0.0, 0.0]), 0.0);
        assert!((it.eval(&[0.125, 0.0]) - 0.5).abs() < 1e-15);
        assert!((it.eval(&[0.375, 0.0]) - 1.5).abs() < 1e-15);
        assert_eq!(it.eval(&[1.0, 0.0]), 0.0);
    }
}
