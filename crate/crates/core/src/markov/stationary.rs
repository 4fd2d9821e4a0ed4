//! Stationary distributions of finite chains.
//!
//! The primary solver is a direct banded elimination of `pi (I - P) = 0`
//! with one balance equation replaced by pinning a recurrent state, which
//! keeps the band intact; the result is normalized afterwards. Dense
//! `pi = 1 (I - P + Theta)^-1` is kept as an independent cross-check for
//! small chains, and lazy power iteration is the fallback.

use nalgebra::DMatrix;
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sparse::SparseMatrix;

/// Residual `||pi P - pi||_1` accepted from the direct solve.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-8;
/// Residual targeted by the power-iteration fallback.
pub const POWER_RESIDUAL_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 1_000_000;
/// Multiply-adds the fallback may spend (iterations x nonzeros).
pub const POWER_WORK_BUDGET: usize = 20_000_000_000;
/// Largest chain the dense inverse is allowed on.
pub const DENSE_LIMIT: usize = 2_000;
/// Band storage budget (f64 cells) for the direct solve.
pub const MAX_BAND_CELLS: usize = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Banded,
    PowerIteration,
    DenseInverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `||pi P - pi||_1`.
    pub residual: f64,
    pub method: SolveMethod,
}

/// Closed communicating classes (recurrent classes) of the chain.
pub fn closed_classes(p: &SparseMatrix) -> Vec<Vec<usize>> {
    let n = p.dim();
    let mut g = DiGraph::<(), ()>::with_capacity(n, p.nnz());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for r in 0..n {
        for (c, v) in p.row(r) {
            if v > 0.0 && c != r {
                g.add_edge(nodes[r], nodes[c], ());
            }
        }
    }
    let sccs = kosaraju_scc(&g);
    let mut class_of = vec![0usize; n];
    for (k, scc) in sccs.iter().enumerate() {
        for v in scc {
            class_of[v.index()] = k;
        }
    }
    sccs.into_iter()
        .enumerate()
        .filter(|(k, scc)| {
            scc.iter().all(|v| {
                p.row(v.index())
                    .all(|(c, val)| val <= 0.0 || class_of[c] == *k)
            })
        })
        .map(|(_, scc)| {
            let mut states: Vec<usize> = scc.into_iter().map(|v| v.index()).collect();
            states.sort_unstable();
            states
        })
        .collect()
}

pub fn residual(p: &SparseMatrix, pi: &[f64]) -> f64 {
    let next = p.left_mul(pi);
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

fn normalize(pi: &mut [f64]) -> Result<()> {
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Stationary(format!("negative stationary mass {v}")));
            }
            *v = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::Stationary(format!("stationary vector sums to {s}")));
    }
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(())
}

/// Band storage of a square matrix: row `r` keeps columns `r - lower ..= r + upper`.
struct Band {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl Band {
    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        r * self.width() + (c + self.lower - r)
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.slot(r, c)]
    }

    /// Gaussian elimination without pivoting, then back substitution.
    /// The transposed generator with a pinned row is a nonsingular
    /// M-matrix, so every pivot stays positive.
    fn solve(mut self, mut b: Vec<f64>) -> Result<Vec<f64>> {
        let n = self.n;
        let w = self.width();
        for k in 0..n {
            let pivot = self.get(k, k);
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Error::Stationary(format!("zero pivot at {k}")));
            }
            let last_col = (k + self.upper).min(n - 1);
            let span = last_col - k; // columns k+1 ..= last_col
            let last_row = (k + self.lower).min(n - 1);
            for r in k + 1..=last_row {
                let sr = self.slot(r, k);
                let factor = self.data[sr];
                if factor == 0.0 {
                    continue;
                }
                let l = factor / pivot;
                self.data[sr] = 0.0;
                b[r] -= l * b[k];
                if span == 0 {
                    continue;
                }
                let (head, tail) = self.data.split_at_mut(r * w);
                let pivot_row = &head[k * w + self.lower + 1..k * w + self.lower + 1 + span];
                let start = k + 1 + self.lower - r;
                let target = &mut tail[start..start + span];
                for (t, p) in target.iter_mut().zip(pivot_row) {
                    *t -= l * p;
                }
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut acc = b[k];
            let last_col = (k + self.upper).min(n - 1);
            for (c, xc) in x.iter().enumerate().take(last_col + 1).skip(k + 1) {
                acc -= self.get(k, c) * xc;
            }
            x[k] = acc / self.get(k, k);
        }
        Ok(x)
    }
}

pub fn bandwidths(p: &SparseMatrix, pos: &[usize]) -> (usize, usize) {
    // entry P[from][to] lands at row pos[to], column pos[from] of (I - P)^T
    let (mut lower, mut upper) = (0usize, 0usize);
    for from in 0..p.dim() {
        for (to, v) in p.row(from) {
            if v != 0.0 {
                let (r, c) = (pos[to], pos[from]);
                if r > c {
                    lower = lower.max(r - c);
                } else {
                    upper = upper.max(c - r);
                }
            }
        }
    }
    (lower, upper)
}

type Ordering = (Vec<usize>, (usize, usize));

/// Position map and band of the candidate ordering with the smallest band.
fn best_ordering(p: &SparseMatrix, orders: &[Vec<usize>]) -> Result<Ordering> {
    let n = p.dim();
    let natural: Vec<usize> = (0..n).collect();
    let mut best: Option<(usize, Ordering)> = None;
    for order in std::iter::once(&natural).chain(orders) {
        if order.len() != n {
            return Err(Error::InvalidInput("ordering has wrong length".into()));
        }
        let mut pos = vec![usize::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            pos[old] = new;
        }
        if pos.contains(&usize::MAX) {
            return Err(Error::InvalidInput("ordering is not a permutation".into()));
        }
        let bw = bandwidths(p, &pos);
        let cost = bw.0 + bw.1;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, (pos, bw)));
        }
    }
    Ok(best.expect("at least one ordering").1)
}

/// Storage the direct solve would need, in f64 cells.
pub fn band_cells(p: &SparseMatrix, orders: &[Vec<usize>]) -> Result<usize> {
    let (_, (lower, upper)) = best_ordering(p, orders)?;
    Ok(p.dim().saturating_mul(lower + upper + 1))
}

/// Direct banded solve. `orders` lists candidate state orderings (each a
/// permutation listing old indices in new order); the one with the
/// narrowest band is used. The natural order is always a candidate.
pub fn solve_banded(p: &SparseMatrix, reference: usize, orders: &[Vec<usize>]) -> Result<Vec<f64>> {
    let n = p.dim();
    let (pos, (lower, upper)) = best_ordering(p, orders)?;
    let cells = n
        .checked_mul(lower + upper + 1)
        .filter(|&c| c <= MAX_BAND_CELLS)
        .ok_or_else(|| Error::Stationary(format!("band too wide: {n} states x {} diagonals", lower + upper + 1)))?;
    let mut band = Band {
        n,
        lower,
        upper,
        data: vec![0.0; cells],
    };
    let pinned = pos[reference];
    for from in 0..n {
        let c = pos[from];
        for (to, v) in p.row(from) {
            let r = pos[to];
            if r != pinned {
                band.add(r, c, -v);
            }
        }
    }
    for r in 0..n {
        if r != pinned {
            band.add(r, r, 1.0);
        }
    }
    band.add(pinned, pinned, 1.0);
    let mut rhs = vec![0.0; n];
    rhs[pinned] = 1.0;
    let x = band.solve(rhs)?;
    let mut pi: Vec<f64> = (0..n).map(|old| x[pos[old]]).collect();
    normalize(&mut pi)?;
    Ok(pi)
}

/// Power iteration on the lazy chain `(I + P) / 2`, which shares `P`'s
/// stationary law and is aperiodic.
pub fn solve_power(p: &SparseMatrix, start: Option<Vec<f64>>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = p.dim();
    let mut pi = start.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    normalize(&mut pi)?;
    for it in 0..max_iter {
        let step = p.left_mul(&pi);
        let next: Vec<f64> = pi.iter().zip(&step).map(|(a, b)| 0.5 * (a + b)).collect();
        pi = next;
        if it % 64 == 0 && residual(p, &pi) <= tol {
            normalize(&mut pi)?;
            return Ok(pi);
        }
    }
    let r = residual(p, &pi);
    if r <= tol {
        normalize(&mut pi)?;
        Ok(pi)
    } else {
        Err(Error::Stationary(format!("power iteration stalled at residual {r:e}")))
    }
}

/// `pi = 1 (I - P + Theta)^-1` with `Theta` the all-ones matrix.
pub fn solve_dense_inverse(p: &SparseMatrix) -> Result<Vec<f64>> {
    let n = p.dim();
    if n > DENSE_LIMIT {
        return Err(Error::InvalidInput(format!("dense inverse limited to {DENSE_LIMIT} states, chain has {n}")));
    }
    let mut m = DMatrix::<f64>::from_element(n, n, 1.0);
    for r in 0..n {
        m[(r, r)] += 1.0;
        for (c, v) in p.row(r) {
            m[(r, c)] -= v;
        }
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Stationary("I - P + Theta is singular (chain is not unichain)".into()))?;
    let mut pi: Vec<f64> = (0..n).map(|c| inv.column(c).sum()).collect();
    normalize(&mut pi)?;
    Ok(pi)
}

/// Stationary law of a unichain. Reducible chains (more than one closed
/// class) are rejected since their limit depends on the start state.
pub fn stationary_distribution(p: &SparseMatrix, orders: &[Vec<usize>]) -> Result<Stationary> {
    let n = p.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty chain".into()));
    }
    let closed = closed_classes(p);
    if closed.len() != 1 {
        return Err(Error::Reducible {
            closed_classes: closed.len(),
        });
    }
    let reference = closed[0][0];
    let direct = solve_banded(p, reference, orders).ok();
    match direct {
        Some(pi) if residual(p, &pi) <= DIRECT_RESIDUAL_TOL => Ok(Stationary {
            residual: residual(p, &pi),
            pi,
            method: SolveMethod::Banded,
        }),
        // an inaccurate direct answer is still a good starting point
        start => {
            let max_iter = POWER_MAX_ITERATIONS.min(POWER_WORK_BUDGET / p.nnz().max(1));
            let pi = solve_power(p, start, POWER_RESIDUAL_TOL, max_iter)?;
            let r = residual(p, &pi);
            Ok(Stationary {
                pi,
                residual: r,
                method: SolveMethod::PowerIteration,
            })
        }
    }
}
