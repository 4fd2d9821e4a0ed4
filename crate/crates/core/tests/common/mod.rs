#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twrelay::{ArrivalRates, ChannelGains, NUM_MODES};

/// Gains in [0.5, 4], arrival rates in [0.2, 1.5], no back-off.
pub fn random_static_instances(n: usize, seed: u64) -> Vec<(ChannelGains, ArrivalRates)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut g = || rng.random_range(0.5..4.0);
            let gains = ChannelGains::new(g(), g(), g(), g()).unwrap();
            let rates = ArrivalRates::new(rng.random_range(0.2..1.5), rng.random_range(0.2..1.5), 0.0).unwrap();
            (gains, rates)
        })
        .collect()
}

fn mode_energy(f: f64, load: f64, g: f64) -> f64 {
    if load == 0.0 {
        0.0
    } else if f <= 0.0 {
        f64::INFINITY
    } else {
        f * ((load / f).exp2() - 1.0) / g
    }
}

fn total(f: &[f64; NUM_MODES], loads: &[f64; NUM_MODES], g: &[f64; NUM_MODES]) -> f64 {
    (0..NUM_MODES).map(|i| mode_energy(f[i], loads[i], g[i])).sum()
}

/// Minimum of `sum f_i (2^(L_i / f_i) - 1) / g_i` over the simplex by
/// pairwise exchange with golden-section line search. The objective is
/// convex, so exchange between pairs reaches the optimum.
pub fn exchange_oracle(g: &[f64; NUM_MODES], loads: &[f64; NUM_MODES]) -> f64 {
    let active: Vec<usize> = (0..NUM_MODES).filter(|&i| loads[i] > 0.0).collect();
    let sum: f64 = active.iter().map(|&i| loads[i]).sum();
    let mut f = [0.0; NUM_MODES];
    for &i in &active {
        f[i] = loads[i] / sum;
    }
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = total(&f, loads, g);
    for _ in 0..2000 {
        let before = best;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (i, j) = (active[a], active[b]);
                let pair = |t: f64| mode_energy(f[i] + t, loads[i], g[i]) + mode_energy(f[j] - t, loads[j], g[j]);
                let (mut lo, mut hi) = (-f[i], f[j]);
                let mut x1 = hi - phi * (hi - lo);
                let mut x2 = lo + phi * (hi - lo);
                let (mut p1, mut p2) = (pair(x1), pair(x2));
                for _ in 0..90 {
                    if p1 < p2 {
                        hi = x2;
                        x2 = x1;
                        p2 = p1;
                        x1 = hi - phi * (hi - lo);
                        p1 = pair(x1);
                    } else {
                        lo = x1;
                        x1 = x2;
                        p1 = p2;
                        x2 = lo + phi * (hi - lo);
                        p2 = pair(x2);
                    }
                }
                let t = 0.5 * (lo + hi);
                if pair(t) < pair(0.0) {
                    f[i] += t;
                    f[j] -= t;
                }
            }
        }
        best = total(&f, loads, g);
        if before - best <= 1e-15 * best {
            break;
        }
    }
    best
}

/// Exponential integral `E1(x)` for `x > 0`: power series below 1, Lentz
/// continued fraction above.
pub fn e1(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        -0.577_215_664_901_532_9 - x.ln() - sum
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

/// Water-filling averages over an exponential gain with mean `mean`:
/// `(Rbar, Pbar)` with threshold `1 / (beta log2 e)`.
pub fn rayleigh_closed_form(beta: f64, mean: f64) -> (f64, f64) {
    let c = beta * std::f64::consts::LOG2_E;
    let x = 1.0 / (c * mean);
    let rate = std::f64::consts::LOG2_E * e1(x);
    let power = c * (-x).exp() - e1(x) / mean;
    (rate, power)
}
