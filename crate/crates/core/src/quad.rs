//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Returns (kronrod estimate, error estimate, integral of |f|).
fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64, f64) {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut abs = WGK[7] * fc.abs();
    for j in 0..7 {
        let dx = half * XGK[j];
        let (f1, f2) = (f(centre - dx), f(centre + dx));
        kronrod += WGK[j] * (f1 + f2);
        abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let err = ((kronrod - gauss) * half).abs();
    (kronrod * half, err, abs * half.abs())
}

/// Integrates `f` over `[lo, hi]` to relative tolerance `rel_tol`.
///
/// `breaks` lists interior points where `f` may be non-smooth; the interval
/// is split there before adaptive refinement starts.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
    rel_tol: f64,
) -> Result<Quadrature> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite bounds [{lo}, {hi}]")));
    }
    if hi <= lo {
        return Ok(Quadrature {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    let mut cuts = vec![lo];
    cuts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut heap = BinaryHeap::new();
    let (mut total, mut total_err, mut total_abs) = (0.0, 0.0, 0.0);
    let mut evaluations = 0;
    for w in cuts.windows(2) {
        let (v, e, a) = gk15(&f, w[0], w[1]);
        evaluations += 15;
        total += v;
        total_err += e;
        total_abs += a;
        heap.push(Piece {
            lo: w[0],
            hi: w[1],
            value: v,
            error: e,
        });
    }

    loop {
        let tol = (rel_tol * total.abs()).max(50.0 * f64::EPSILON * total_abs);
        if total_err <= tol || total_abs == 0.0 {
            break;
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: total,
                error_estimate: total_err,
                evaluations,
            });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) {
            // interval can no longer be split in floating point
            heap.push(worst);
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: total,
                error_estimate: total_err,
                evaluations,
            });
        }
        let (v1, e1, a1) = gk15(&f, worst.lo, mid);
        let (v2, e2, a2) = gk15(&f, mid, worst.hi);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        total_abs += a1 + a2;
        heap.push(Piece {
            lo: worst.lo,
            hi: mid,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            lo: mid,
            hi: worst.hi,
            value: v2,
            error: e2,
        });
    }
    // recompute from the pieces to shed accumulated update roundoff
    let value = heap.iter().map(|p| p.value).sum();
    let error_estimate = heap.iter().map(|p| p.error).sum();
    Ok(Quadrature {
        value,
        error_estimate,
        evaluations,
    })
}
