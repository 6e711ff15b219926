use thiserror::Error;

use super::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("matrix is singular to working precision at column {column}")]
pub struct SingularMatrix {
    pub column: usize,
}

/// LU factorization with partial pivoting of a banded matrix, stored the
/// way LAPACK's `gbtrf` does: `U` keeps `kl + ku` superdiagonals after row
/// interchanges, and `L` is kept as per-column multipliers applied in
/// pivot order.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// Row slot `i` holds columns `i - kl ..= i + kl + ku`.
    band: Vec<f64>,
    mult: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Factors `A + shift * I`.
    pub fn factor_shifted(a: &CsrMatrix, shift: f64) -> Result<Self, SingularMatrix> {
        assert_eq!(a.n_rows(), a.n_cols(), "band LU needs a square matrix");
        let n = a.n_rows();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, ku, width, band: vec![0.0; n * width], mult: vec![0.0; n * kl], pivots: vec![0; n] };
        for (i, j, v) in a.triplets() {
            *lu.at(i, j) += v;
        }
        for i in 0..n {
            *lu.at(i, i) += shift;
        }
        lu.eliminate()?;
        Ok(lu)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self, SingularMatrix> {
        Self::factor_shifted(a, 0.0)
    }

    #[inline]
    fn idx(&self, i: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= i && c + self.kl - i < self.width);
        i * self.width + (c + self.kl - i)
    }

    #[inline]
    fn at(&mut self, i: usize, c: usize) -> &mut f64 {
        let k = self.idx(i, c);
        &mut self.band[k]
    }

    fn eliminate(&mut self) -> Result<(), SingularMatrix> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let scale = self.band.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.band[self.idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.band[self.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= scale * 1e-300 || !best.is_finite() {
                return Err(SingularMatrix { column: k });
            }
            self.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[self.idx(k, k)];
            for r in k + 1..=last_row {
                let rk = self.idx(r, k);
                let l = self.band[rk] / pivot;
                self.band[rk] = 0.0;
                self.mult[k * kl + (r - k - 1)] = l;
                if l != 0.0 {
                    let src = self.idx(k, k + 1);
                    let dst = self.idx(r, k + 1);
                    for off in 0..last_col - k {
                        self.band[dst + off] -= l * self.band[src + off];
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.mult[k * kl + (r - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let last = (i + kl + ku).min(n - 1);
            let base = self.idx(i, i);
            let mut s = b[i];
            for (off, c) in (i + 1..=last).enumerate() {
                s -= self.band[base + 1 + off] * b[c];
            }
            b[i] = s / self.band[base];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_solve(a: &CsrMatrix, b: &[f64]) {
        let lu = BandLu::factor(a).unwrap();
        let x = lu.solve(b);
        let ax = a.mul_vec(&x);
        let scale = b.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for (u, v) in ax.iter().zip(b) {
            assert!((u - v).abs() <= 1e-9 * scale, "{u} vs {v}");
        }
    }

    #[test]
    fn pivoting_is_needed_and_handled() {
        // zero leading pivot forces a row interchange
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0), (1, 2, 2.0), (2, 1, 3.0), (2, 2, 1.0)]);
        check_solve(&a, &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(BandLu::factor(&a).is_err());
    }

    #[test]
    fn shifted_factor() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let lu = BandLu::factor_shifted(&a, 1.0).unwrap();
        // [[2,1],[1,2]] x = [3,3] -> x = [1,1]
        let x = lu.solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn random_banded_systems(
            n in 1usize..40,
            kl in 0usize..5,
            ku in 0usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut t = Vec::new();
            for i in 0..n {
                for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
                // keep it comfortably nonsingular without making pivoting trivial
                t.push((i, i, if rng.random_bool(0.5) { 0.5 } else { -0.5 } * n as f64 / 4.0));
            }
            let a = CsrMatrix::from_triplets(n, n, &t);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lu = BandLu::factor(&a).unwrap();
            let x = lu.solve(&b);
            let dense = a.to_dense().lu().solve(&nalgebra::DVector::from_row_slice(&b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - dense[i]).abs() <= 1e-8 * (1.0 + dense[i].abs()));
            }
        }
    }
}
