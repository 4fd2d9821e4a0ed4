//! Energy-minimal time sharing over static channels.
//!
//! With the per-mode loads fixed (the broadcast mode carries the smaller
//! flow, one forwarding mode carries the imbalance), each rate is pinned to
//! `R_i = load_i / f_i` and the remaining problem is convex in the time
//! fractions. Stationarity of every active mode reads
//! `2^R (1 - R ln 2) = 1 - beta * g`, so all rates follow from the single
//! multiplier `beta`, and `beta` is found by bisection on `sum f_i = 1`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{power_for_rate, Allocation, ArrivalRates, ChannelGains, Mode, Multipliers, NUM_MODES};

/// Upper limit on the multiplier search.
pub const DEFAULT_BETA_CAP: f64 = 1e9;

/// Service counts are `floor(R + PACKET_SLACK)` so a rate that is an integer
/// up to roundoff is not rounded down a whole packet.
pub const PACKET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSolution {
    pub allocation: Allocation,
    /// Stationarity residual `2^R(1 - R ln2)/g + beta - 1/g` per mode (0 if inactive).
    pub kkt_residuals: [f64; NUM_MODES],
    pub active: [bool; NUM_MODES],
    pub gains: ChannelGains,
    /// Load each mode was sized for (packets per slot).
    pub loads: [f64; NUM_MODES],
}

impl StaticSolution {
    pub fn active_modes(&self) -> Vec<Mode> {
        Mode::ALL.into_iter().filter(|m| self.active[m.index()]).collect()
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    /// Whole packets mode `mode` can carry per slot.
    pub fn service_packets(&self, mode: Mode) -> u32 {
        packets_for_rate(self.allocation.rates[mode.index()])
    }

    /// `f_i R_i - load_i` per mode.
    pub fn load_residuals(&self) -> [f64; NUM_MODES] {
        let a = &self.allocation;
        std::array::from_fn(|i| a.fractions[i] * a.rates[i] - self.loads[i])
    }

    pub fn energy(&self) -> f64 {
        self.allocation.total_energy
    }
}

pub fn packets_for_rate(rate: f64) -> u32 {
    if rate.is_finite() && rate > 0.0 {
        (rate + PACKET_SLACK).floor() as u32
    } else {
        0
    }
}

/// `1 - 2^R (1 - R ln 2)`, increasing from 0 at `R = 0`.
fn stationarity_gap(rate: f64) -> f64 {
    let x = rate * LN_2;
    if x < 1e-2 {
        // sum_{k>=2} x^k (k-1)/k!, avoids the cancellation near 0
        let mut term = x; // x^k / k! at k = 1
        let mut acc = 0.0;
        for k in 2..12 {
            term *= x / k as f64;
            acc += term * (k - 1) as f64;
        }
        acc
    } else {
        x * x.exp() - x.exp_m1()
    }
}

/// Rate of an active mode at multiplier `beta`: the root of
/// `2^R (1 - R ln 2) = 1 - beta * gain`.
pub fn rate_for_multiplier(beta: f64, gain: f64) -> Result<f64> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(Error::NonPositiveGain(gain));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::NoActiveRoot(beta));
    }
    let target = beta * gain;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while stationarity_gap(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NoActiveRoot(beta));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if stationarity_gap(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    // one Newton step; d/dR gap = 2^R R ln^2 2
    let slope = (r * LN_2).exp() * r * LN_2 * LN_2;
    if slope > 0.0 {
        let step = (stationarity_gap(r) - target) / slope;
        let polished = r - step;
        if polished >= lo && polished <= hi {
            r = polished;
        }
    }
    Ok(r)
}

/// KKT stationarity residual of an active mode.
pub fn stationarity_residual(rate: f64, gain: f64, beta: f64) -> f64 {
    (beta * gain - stationarity_gap(rate)) / gain
}

fn fraction_sum(gains: &[f64; NUM_MODES], loads: &[f64; NUM_MODES], beta: f64) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..NUM_MODES {
        if loads[i] > 0.0 {
            s += loads[i] / rate_for_multiplier(beta, gains[i])?;
        }
    }
    Ok(s)
}

/// Solves the convex time-sharing problem for explicit per-mode loads.
/// Modes with zero load get zero time.
pub fn solve_for_loads(gains: &ChannelGains, loads: [f64; NUM_MODES], beta_cap: f64) -> Result<StaticSolution> {
    if loads.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput(format!("loads must be finite and >= 0: {loads:?}")));
    }
    if loads.iter().all(|&l| l == 0.0) {
        return Err(Error::InvalidInput("both arrival rates are zero".into()));
    }
    let g = gains.as_array();
    let active: [bool; NUM_MODES] = std::array::from_fn(|i| loads[i] > 0.0);

    let mut lo = 1e-12;
    while fraction_sum(&g, &loads, lo)? <= 1.0 {
        lo *= 1e-3;
        if lo < 1e-300 {
            return Err(Error::InvalidInput("loads too small to resolve".into()));
        }
    }
    let mut hi = 1.0_f64.max(lo * 2.0);
    while fraction_sum(&g, &loads, hi)? >= 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > beta_cap {
            return Err(Error::Infeasible { cap: beta_cap });
        }
    }
    for _ in 0..400 {
        // geometric split while the bracket spans orders of magnitude
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let s = fraction_sum(&g, &loads, mid)?;
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - 1.0).abs() <= 1e-15 {
            break;
        }
    }
    let s_lo = fraction_sum(&g, &loads, lo)?;
    let s_hi = fraction_sum(&g, &loads, hi)?;
    let beta = if (s_lo - 1.0).abs() <= (s_hi - 1.0).abs() { lo } else { hi };

    let mut fractions = [0.0; NUM_MODES];
    let mut rates = [0.0; NUM_MODES];
    let mut powers = [0.0; NUM_MODES];
    let mut residuals = [0.0; NUM_MODES];
    for i in 0..NUM_MODES {
        if active[i] {
            let r = rate_for_multiplier(beta, g[i])?;
            rates[i] = r;
            fractions[i] = loads[i] / r;
            powers[i] = power_for_rate(r, g[i])?;
            residuals[i] = stationarity_residual(r, g[i], beta);
        }
    }
    let total_energy = fractions.iter().zip(&powers).map(|(f, p)| f * p).sum();
    Ok(StaticSolution {
        allocation: Allocation {
            fractions,
            rates,
            powers,
            multipliers: Multipliers::Static { beta },
            total_energy,
        },
        kkt_residuals: residuals,
        active,
        gains: *gains,
        loads,
    })
}

/// Minimum-energy allocation with network-coded broadcast.
pub fn solve_static(gains: &ChannelGains, rates: &ArrivalRates) -> Result<StaticSolution> {
    rates.validate()?;
    solve_for_loads(gains, rates.mode_loads(), DEFAULT_BETA_CAP)
}

/// Baseline without the broadcast mode: both flows are forwarded separately.
pub fn solve_conventional(gains: &ChannelGains, rates: &ArrivalRates) -> Result<StaticSolution> {
    rates.validate()?;
    solve_for_loads(gains, rates.conventional_loads(), DEFAULT_BETA_CAP)
}

/// Closed-form allocation for light traffic:
/// `f_i = load_i * sqrt(1 + beta - 1/g_i)` with `beta` set by `sum f_i = 1`.
pub fn approx_small_lambda(gains: &ChannelGains, rates: &ArrivalRates) -> Result<Allocation> {
    rates.validate()?;
    let loads = rates.mode_loads();
    let g = gains.as_array();
    if loads.iter().all(|&l| l == 0.0) {
        return Err(Error::InvalidInput("both arrival rates are zero".into()));
    }
    let fractions_at = |beta: f64| -> [f64; NUM_MODES] {
        std::array::from_fn(|i| {
            if loads[i] > 0.0 {
                loads[i] * (1.0 + beta - 1.0 / g[i]).max(0.0).sqrt()
            } else {
                0.0
            }
        })
    };
    let sum_at = |beta: f64| fractions_at(beta).iter().sum::<f64>();

    // every active mode needs 1 + beta - 1/g_i > 0
    let beta_min = (0..NUM_MODES)
        .filter(|&i| loads[i] > 0.0)
        .map(|i| 1.0 / g[i] - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = beta_min;
    if sum_at(lo) > 1.0 {
        return Err(Error::ApproximationInvalid(format!(
            "fractions already sum to {:.4} at the smallest admissible multiplier",
            sum_at(lo)
        )));
    }
    let mut width = 1.0;
    while sum_at(lo + width) < 1.0 {
        lo += width;
        width *= 2.0;
        if width > 1e300 {
            return Err(Error::ApproximationInvalid("multiplier bracket diverged".into()));
        }
    }
    let mut hi = lo + width;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sum_at(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    let fractions = fractions_at(beta);
    let mut rates_out = [0.0; NUM_MODES];
    let mut powers = [0.0; NUM_MODES];
    for i in 0..NUM_MODES {
        if fractions[i] > 0.0 {
            rates_out[i] = loads[i] / fractions[i];
            powers[i] = power_for_rate(rates_out[i], g[i])?;
        }
    }
    let total_energy = fractions.iter().zip(&powers).map(|(f, p)| f * p).sum();
    Ok(Allocation {
        fractions,
        rates: rates_out,
        powers,
        multipliers: Multipliers::Static { beta },
        total_energy,
    })
}

/// Energy of time fractions `f` when every active mode runs at `load / f`.
fn energy_of(g: &[f64; NUM_MODES], loads: &[f64; NUM_MODES], f: &[f64; NUM_MODES]) -> f64 {
    let mut e = 0.0;
    for i in 0..NUM_MODES {
        if loads[i] > 0.0 {
            if f[i] <= 0.0 {
                return f64::INFINITY;
            }
            e += f[i] * (loads[i] / f[i] * LN_2).exp_m1() / g[i];
        }
    }
    e
}

/// Exhaustive simplex search over the time fractions of the loaded modes at
/// resolution `grid_step`, followed by ten rounds of pairwise transfers at
/// halving step sizes around the incumbent.
///
/// Independent of the multiplier machinery; every point it visits is
/// feasible, so its energy upper-bounds the true optimum.
pub fn brute_force_oracle(gains: &ChannelGains, rates: &ArrivalRates, grid_step: f64) -> Result<Allocation> {
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(Error::InvalidInput(format!("grid step must lie in (0, 0.1], got {grid_step}")));
    }
    rates.validate()?;
    let loads = rates.mode_loads();
    let g = gains.as_array();
    let active: Vec<usize> = (0..NUM_MODES).filter(|&i| loads[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::InvalidInput("both arrival rates are zero".into()));
    }
    let cells = (1.0 / grid_step).round() as usize;

    let mut best = [0.0; NUM_MODES];
    let mut best_e = f64::INFINITY;
    let mut counts = vec![0usize; active.len()];
    enumerate_compositions(cells, 0, &mut counts, &mut |c| {
        let mut f = [0.0; NUM_MODES];
        for (slot, &i) in active.iter().enumerate() {
            f[i] = c[slot] as f64 / cells as f64;
        }
        let e = energy_of(&g, &loads, &f);
        if e < best_e {
            best_e = e;
            best = f;
        }
    });

    let mut step = grid_step / 2.0;
    for _ in 0..10 {
        let mut improved = true;
        let mut sweeps = 0;
        while improved && sweeps < 10_000 {
            improved = false;
            sweeps += 1;
            for &a in &active {
                for &b in &active {
                    if a == b || best[b] < step {
                        continue;
                    }
                    let mut cand = best;
                    cand[a] += step;
                    cand[b] -= step;
                    let e = energy_of(&g, &loads, &cand);
                    if e < best_e {
                        best_e = e;
                        best = cand;
                        improved = true;
                    }
                }
            }
        }
        step /= 2.0;
    }

    let mut rates_out = [0.0; NUM_MODES];
    let mut powers = [0.0; NUM_MODES];
    for &i in &active {
        rates_out[i] = loads[i] / best[i];
        powers[i] = power_for_rate(rates_out[i], g[i])?;
    }
    Ok(Allocation {
        fractions: best,
        rates: rates_out,
        powers,
        multipliers: Multipliers::Static { beta: f64::NAN },
        total_energy: best_e,
    })
}

fn enumerate_compositions(remaining: usize, slot: usize, counts: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if slot + 1 == counts.len() {
        counts[slot] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[slot] = c;
        enumerate_compositions(remaining - c, slot + 1, counts, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> ChannelGains {
        ChannelGains::uniform(1.0).unwrap()
    }

    #[test]
    fn rate_root_where_one_minus_r_ln2_vanishes() {
        let r = rate_for_multiplier(1.0, 1.0).unwrap();
        assert!((r - 1.0 / LN_2).abs() < 1e-12, "{r}");
        let r2 = rate_for_multiplier(0.5, 2.0).unwrap();
        assert!((r2 - 1.0 / LN_2).abs() < 1e-12);
    }

    #[test]
    fn rate_vanishes_with_multiplier() {
        let r = rate_for_multiplier(1e-14, 1.0).unwrap();
        assert!(r > 0.0 && r < 1e-6, "{r}");
        // light-load asymptote R ~ sqrt(2 beta g) / ln 2
        let expect = (2.0e-14f64).sqrt() / LN_2;
        assert!((r / expect - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rate_rejects_nonpositive_multiplier() {
        assert!(matches!(rate_for_multiplier(0.0, 1.0), Err(Error::NoActiveRoot(_))));
        assert!(matches!(rate_for_multiplier(-1.0, 1.0), Err(Error::NoActiveRoot(_))));
        assert!(rate_for_multiplier(1.0, 0.0).is_err());
    }

    #[test]
    fn rate_residual_is_tiny() {
        for &(b, g) in &[(1e-6, 1.0), (0.3, 2.0), (5.0, 0.5), (400.0, 0.5), (1e5, 3.0)] {
            let r = rate_for_multiplier(b, g).unwrap();
            let phi = (r * LN_2).exp() * (1.0 - r * LN_2);
            assert!((phi - (1.0 - b * g)).abs() <= 1e-12 * (1.0 + b * g), "b={b} g={g}");
        }
    }

    #[test]
    fn symmetric_instance() {
        let s = solve_static(&unit(), &ArrivalRates::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        let f = s.allocation.fractions;
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 0.0);
        assert!((f[0] - 1.0 / 3.0).abs() < 1e-9 && (f[1] - f[0]).abs() < 1e-12 && (f[2] - f[0]).abs() < 1e-12);
        let r = s.allocation.rates;
        assert!((r[0] - 3.0).abs() < 1e-8 && (r[1] - r[2]).abs() < 1e-12);
    }

    #[test]
    fn unit_gain_energies() {
        // equal gains => equal rates = total load, energy = 2^load - 1
        let rates = ArrivalRates::new(1.5, 1.0, 0.0).unwrap();
        let dnc = solve_static(&unit(), &rates).unwrap();
        assert!((dnc.energy() - 15.0).abs() < 1e-7, "{}", dnc.energy());
        let conv = solve_conventional(&unit(), &rates).unwrap();
        assert!((conv.energy() - 31.0).abs() < 1e-7, "{}", conv.energy());
    }

    #[test]
    fn conventional_symmetric() {
        let s = solve_conventional(&unit(), &ArrivalRates::new(0.7, 0.7, 0.0).unwrap()).unwrap();
        let f = s.allocation.fractions;
        assert_eq!(f[2], 0.0);
        assert!((f[0] - f[1]).abs() < 1e-12 && (f[3] - f[4]).abs() < 1e-12);
    }

    #[test]
    fn one_silent_source() {
        let s = solve_static(&unit(), &ArrivalRates::new(0.0, 1.0, 0.0).unwrap()).unwrap();
        let f = s.allocation.fractions;
        assert_eq!((f[0], f[2], f[4]), (0.0, 0.0, 0.0));
        assert!((f[1] + f[3] - 1.0).abs() < 1e-9);
        assert!(solve_static(&unit(), &ArrivalRates::new(0.0, 0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn stronger_link_gets_higher_rate_lower_power() {
        let g = ChannelGains::new(3.0, 1.0, 2.0, 2.0).unwrap();
        let s = solve_static(&g, &ArrivalRates::new(0.8, 1.0, 0.0).unwrap()).unwrap();
        let a = &s.allocation;
        assert!(a.rates[0] > a.rates[1]);
        assert!(a.powers[0] < a.powers[1]);
    }

    #[test]
    fn infeasible_under_tiny_cap() {
        let r = solve_for_loads(&unit(), ArrivalRates::new(5.0, 5.0, 0.0).unwrap().mode_loads(), 10.0);
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn approximation_symmetric_thirds() {
        let a = approx_small_lambda(&unit(), &ArrivalRates::new(0.01, 0.01, 0.0).unwrap()).unwrap();
        for i in 0..3 {
            assert!((a.fractions[i] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn approximation_invalid_when_heavily_loaded() {
        let g = ChannelGains::new(5.0, 5.0, 0.2, 5.0).unwrap();
        let r = approx_small_lambda(&g, &ArrivalRates::new(0.5, 2.0, 0.0).unwrap());
        assert!(matches!(r, Err(Error::ApproximationInvalid(_))));
    }

    #[test]
    fn oracle_agrees_on_unit_instance() {
        let rates = ArrivalRates::new(1.0, 1.0, 0.0).unwrap();
        let o = brute_force_oracle(&unit(), &rates, 0.05).unwrap();
        let s = solve_static(&unit(), &rates).unwrap();
        assert!(o.total_energy >= s.energy() - 1e-9);
        assert!((o.total_energy - s.energy()) / o.total_energy < 0.01);
    }

    #[test]
    fn oracle_silent_source() {
        let o = brute_force_oracle(&unit(), &ArrivalRates::new(0.0, 0.8, 0.0).unwrap(), 0.05).unwrap();
        assert_eq!((o.fractions[0], o.fractions[2], o.fractions[4]), (0.0, 0.0, 0.0));
        assert!(brute_force_oracle(&unit(), &ArrivalRates::new(0.5, 0.8, 0.0).unwrap(), 0.2).is_err());
    }

    #[test]
    fn packet_floor_tolerates_roundoff() {
        assert_eq!(packets_for_rate(2.9999999999), 3);
        assert_eq!(packets_for_rate(2.99), 2);
        assert_eq!(packets_for_rate(0.0), 0);
    }
}
