use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use super::path_rng;
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtmcPath {
    /// Killing time, if before the horizon.
    pub exit_time: Option<f64>,
    /// Last state occupied.
    pub state: usize,
    pub jumps: usize,
    /// Time spent in each state up to the horizon or the killing time.
    pub occupancy: Vec<f64>,
}

/// Exact simulation of the chain with generator `g`: exponential holding
/// times with rate `-g[i][i]`, jumps proportional to the off-diagonal rates,
/// and killing with the row deficit `-sum_j g[i][j]`.
pub fn simulate_ctmc_with<R: Rng>(g: &CsrMatrix, x0: usize, horizon: f64, rng: &mut R) -> CtmcPath {
    assert!(x0 < g.n_rows(), "start state out of range");
    let mut occupancy = vec![0.0; g.n_rows()];
    let mut x = x0;
    let mut t = 0.0;
    let mut jumps = 0;
    loop {
        let total: f64 = g.row(x).filter(|(j, _)| *j != x).map(|(_, v)| v).sum::<f64>();
        let out = -g.get(x, x);
        let kill = (out - total).max(0.0);
        let rate = total + kill;
        let hold = if rate > 0.0 { rng.sample::<f64, _>(Exp1) / rate } else { f64::INFINITY };
        if t + hold >= horizon {
            occupancy[x] += horizon - t;
            return CtmcPath { exit_time: None, state: x, jumps, occupancy };
        }
        occupancy[x] += hold;
        t += hold;
        let mut u = rng.random::<f64>() * rate;
        let mut next = None;
        for (j, v) in g.row(x).filter(|(j, _)| *j != x) {
            if u < v {
                next = Some(j);
                break;
            }
            u -= v;
        }
        match next {
            Some(j) => {
                x = j;
                jumps += 1;
            }
            None if kill > 0.0 => return CtmcPath { exit_time: Some(t), state: x, jumps, occupancy },
            // rounding pushed `u` past the last rate with no killing: take the last jump
            None => {
                x = g.row(x).filter(|(j, _)| *j != x).last().map_or(x, |(j, _)| j);
                jumps += 1;
            }
        }
    }
}

/// One path on stream 0 of `seed`.
pub fn simulate_ctmc(g: &CsrMatrix, x0: usize, horizon: f64, seed: u64) -> CtmcPath {
    simulate_ctmc_with(g, x0, horizon, &mut path_rng(seed, 0))
}

/// `n_paths` independent paths, path `i` on stream `i`.
pub fn ctmc_ensemble(g: &CsrMatrix, x0: usize, horizon: f64, n_paths: usize, seed: u64) -> Vec<CtmcPath> {
    (0..n_paths).into_par_iter().map(|i| simulate_ctmc_with(g, x0, horizon, &mut path_rng(seed, i as u64))).collect()
}
