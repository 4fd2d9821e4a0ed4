//! Long-run energy minimization over fading channels.
//!
//! Each active mode follows a water-filling law `P(g) = [c - 1/g]^+` with
//! `c = beta * log2(e)`, i.e. rate `log2(c g)` above the threshold gain
//! `1/c`. The KKT system ties the per-mode multipliers together through a
//! shared `gamma`: `beta_i Rbar_i - Pbar_i = gamma` for every active mode,
//! with `f_i = load_i / Rbar_i` and `sum f_i = 1`. We solve it with an outer
//! bisection on `gamma` and an inner bisection on each `beta_i`.

use std::f64::consts::{LN_2, LOG2_E};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Allocation, ArrivalRates, ChannelDistribution, FadingChannel, Mode, Multipliers, NUM_MODES,
};
use crate::quad;
use crate::static_opt::{packets_for_rate, solve_static, PACKET_SLACK};

/// Relative tolerance of every average-rate / average-power integral.
pub const QUAD_REL_TOL: f64 = 1e-12;

/// Mass above the integration cutoff, relative to the mass above the threshold.
const TAIL_REL: f64 = 1e-17;

const GAMMA_CAP: f64 = 1e12;

fn water_level(beta: f64) -> f64 {
    beta * LOG2_E
}

/// Optimal power at gain `g` for multiplier `beta`.
pub fn waterfill_power(g: f64, beta: f64) -> f64 {
    (water_level(beta) - 1.0 / g).max(0.0)
}

/// Optimal rate at gain `g` for multiplier `beta`: `log2(c g)` above threshold.
pub fn waterfill_rate(g: f64, beta: f64) -> f64 {
    let cg = water_level(beta) * g;
    if cg > 1.0 {
        cg.log2()
    } else {
        0.0
    }
}

/// Gain below which the mode stays silent.
pub fn threshold_gain(beta: f64) -> f64 {
    1.0 / water_level(beta)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("multiplier must be finite and >= 0, got {beta}")))
    }
}

/// Integral of `h(g) p(g)` from the threshold upwards.
fn direct_integral(beta: f64, dist: &ChannelDistribution, h: impl Fn(f64) -> f64) -> Result<f64> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    let lo = threshold_gain(beta);
    let hi = dist.tail_bound(lo, TAIL_REL);
    let q = quad::integrate(|g| h(g) * dist.pdf(g), lo, hi, &dist.breakpoints(), QUAD_REL_TOL)?;
    Ok(q.value)
}

/// Rayleigh integral after substituting `g -> g / c`:
/// `int_1^inf h(g) exp(-g / (c mean)) dg`.
fn substituted_integral(beta: f64, mean: f64, h: impl Fn(f64) -> f64) -> Result<f64> {
    check_beta(beta)?;
    if beta == 0.0 {
        return Ok(0.0);
    }
    let scale = water_level(beta) * mean;
    let hi = 1.0 + scale * (1.0 / TAIL_REL).ln();
    let q = quad::integrate(|g| h(g) * (-g / scale).exp(), 1.0, hi, &[], QUAD_REL_TOL)?;
    Ok(q.value)
}

/// `E[log2(c g) ; g > 1/c]` by direct quadrature against the density.
pub fn avg_rate_direct(beta: f64, dist: &ChannelDistribution) -> Result<f64> {
    let c = water_level(beta);
    direct_integral(beta, dist, |g| (c * g).log2().max(0.0))
}

/// `E[(c - 1/g) ; g > 1/c]` by direct quadrature against the density.
pub fn avg_power_direct(beta: f64, dist: &ChannelDistribution) -> Result<f64> {
    let c = water_level(beta);
    direct_integral(beta, dist, |g| (c - 1.0 / g).max(0.0))
}

/// Rayleigh average rate, integrated by parts: `int_1^inf exp(-g/(c mean)) / (g ln 2) dg`.
pub fn avg_rate_rayleigh(beta: f64, mean: f64) -> Result<f64> {
    substituted_integral(beta, mean, |g| 1.0 / (g * LN_2))
}

/// Rayleigh average power, integrated by parts: `int_1^inf c exp(-g/(c mean)) / g^2 dg`.
pub fn avg_power_rayleigh(beta: f64, mean: f64) -> Result<f64> {
    let c = water_level(beta);
    substituted_integral(beta, mean, |g| c / (g * g))
}

/// Average rate of the water-filling policy under `dist`.
pub fn avg_rate(beta: f64, dist: &ChannelDistribution) -> Result<f64> {
    match dist {
        ChannelDistribution::Rayleigh { mean } => avg_rate_rayleigh(beta, *mean),
        _ => avg_rate_direct(beta, dist),
    }
}

/// Average power of the water-filling policy under `dist`.
pub fn avg_power(beta: f64, dist: &ChannelDistribution) -> Result<f64> {
    match dist {
        ChannelDistribution::Rayleigh { mean } => avg_power_rayleigh(beta, *mean),
        _ => avg_power_direct(beta, dist),
    }
}

/// `beta Rbar - Pbar` as a single integral (no cancellation between the two averages).
pub fn balance(beta: f64, dist: &ChannelDistribution) -> Result<f64> {
    match dist {
        ChannelDistribution::Rayleigh { mean } => {
            let c = water_level(beta);
            substituted_integral(beta, *mean, |g| c * (g - 1.0) / (g * g))
        }
        _ => {
            let c = water_level(beta);
            direct_integral(beta, dist, |g| {
                let cg = c * g;
                (beta * cg.log2() - c + 1.0 / g).max(0.0)
            })
        }
    }
}

/// `Pr[floor(R*(g)) = n]` for `n < max_packets - 1`; the last bin holds the
/// rest of the tail. Rates below one packet, including silence, land in bin 0.
pub fn rate_level_distribution(beta: f64, dist: &ChannelDistribution, max_packets: usize) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if max_packets == 0 {
        return Err(Error::InvalidInput("max_packets must be >= 1".into()));
    }
    let mut p = vec![0.0; max_packets];
    if beta == 0.0 {
        p[0] = 1.0;
        return Ok(p);
    }
    let c = water_level(beta);
    // floor(log2(c g) + slack) >= n  <=>  g >= 2^(n - slack) / c
    let level = |n: usize| (n as f64 - PACKET_SLACK).exp2() / c;
    let mut prev_survival = 1.0;
    for (n, slot) in p.iter_mut().enumerate().take(max_packets - 1) {
        let s = dist.survival(level(n + 1));
        *slot = (prev_survival - s).max(0.0);
        prev_survival = s;
    }
    let head: f64 = p[..max_packets - 1].iter().sum();
    p[max_packets - 1] = (1.0 - head).max(0.0);
    Ok(p)
}

/// Smallest bin count whose lumped tail holds less than `tail` mass.
pub fn packets_needed(beta: f64, dist: &ChannelDistribution, tail: f64) -> usize {
    if beta <= 0.0 {
        return 1;
    }
    let c = water_level(beta);
    let mut n = 1;
    while dist.survival((n as f64 - PACKET_SLACK).exp2() / c) > tail && n < 63 {
        n += 1;
    }
    n + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSolution {
    pub allocation: Allocation,
    pub betas: [f64; NUM_MODES],
    pub gamma: f64,
    pub active: [bool; NUM_MODES],
    pub loads: [f64; NUM_MODES],
    /// `|beta_i Rbar_i - Pbar_i - gamma|` per active mode.
    pub kkt_residuals: [f64; NUM_MODES],
    /// Gain law of each mode.
    pub distributions: [ChannelDistribution; NUM_MODES],
    /// True when the monotonicity scan of `beta Rbar - Pbar` passed for every mode.
    pub balance_monotone: bool,
}

impl ErgodicSolution {
    pub fn energy(&self) -> f64 {
        self.allocation.total_energy
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    pub fn load_residuals(&self) -> [f64; NUM_MODES] {
        let a = &self.allocation;
        std::array::from_fn(|i| a.fractions[i] * a.rates[i] - self.loads[i])
    }

    /// Rate the policy uses in `mode` at instantaneous gain `g`.
    pub fn rate_at(&self, mode: Mode, g: f64) -> f64 {
        if !self.active[mode.index()] {
            return 0.0;
        }
        waterfill_rate(g, self.betas[mode.index()])
    }

    pub fn power_at(&self, mode: Mode, g: f64) -> f64 {
        if !self.active[mode.index()] {
            return 0.0;
        }
        waterfill_power(g, self.betas[mode.index()])
    }

    pub fn packets_at(&self, mode: Mode, g: f64) -> u32 {
        packets_for_rate(self.rate_at(mode, g))
    }

    /// Packet-count law of `mode`; inactive modes never serve.
    pub fn rate_levels(&self, mode: Mode, max_packets: usize) -> Result<Vec<f64>> {
        let i = mode.index();
        let beta = if self.active[i] { self.betas[i] } else { 0.0 };
        rate_level_distribution(beta, &self.distributions[i], max_packets)
    }
}

fn scan_is_monotone(dist: &ChannelDistribution) -> Result<bool> {
    let scale = 1.0 / (LOG2_E * dist.mean_gain());
    let mut prev = f64::NEG_INFINITY;
    for k in 0..11 {
        let beta = scale * 10f64.powf(-2.0 + 0.4 * k as f64);
        let h = balance(beta, dist)?;
        if h < prev {
            return Ok(false);
        }
        prev = h;
    }
    Ok(true)
}

/// Solves `beta Rbar(beta) - Pbar(beta) = gamma` for `beta`.
fn multiplier_for_gamma(gamma: f64, dist: &ChannelDistribution, monotone: bool) -> Result<f64> {
    if gamma <= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if monotone {
        let mut hi = 1.0 / (LOG2_E * dist.mean_gain());
        let mut lo = 0.0;
        while balance(hi, dist)? < gamma {
            lo = hi;
            hi *= 2.0;
            if hi > 1e15 {
                return Err(Error::Infeasible { cap: hi });
            }
        }
        (lo, hi)
    } else {
        // first crossing on a fine logarithmic grid
        let base = 1.0 / (LOG2_E * dist.mean_gain());
        let mut lo = 0.0;
        let mut found = None;
        for k in 0..=600 {
            let beta = base * 10f64.powf(-6.0 + 0.02 * k as f64);
            if balance(beta, dist)? >= gamma {
                found = Some(beta);
                break;
            }
            lo = beta;
        }
        (lo, found.ok_or(Error::Infeasible { cap: base * 1e6 })?)
    };
    for _ in 0..200 {
        let mid = if lo > 0.0 && hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid, dist)? < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Multiplier `beta` of a mode with gain law `dist` at the common level
/// `gamma`, i.e. the root of `beta Rbar(beta) - Pbar(beta) = gamma`.
pub fn multiplier_at_gamma(gamma: f64, dist: &ChannelDistribution) -> Result<f64> {
    dist.validate()?;
    multiplier_for_gamma(gamma, dist, scan_is_monotone(dist)?)
}

struct ModeState {
    beta: f64,
    rate: f64,
}

fn modes_at_gamma(
    gamma: f64,
    dists: &[ChannelDistribution; NUM_MODES],
    loads: &[f64; NUM_MODES],
    monotone: &[bool; NUM_MODES],
) -> Result<(f64, [Option<ModeState>; NUM_MODES])> {
    let mut states: [Option<ModeState>; NUM_MODES] = Default::default();
    let mut sum = 0.0;
    for i in 0..NUM_MODES {
        if loads[i] > 0.0 {
            let beta = multiplier_for_gamma(gamma, &dists[i], monotone[i])?;
            let rate = avg_rate(beta, &dists[i])?;
            sum += if rate > 0.0 { loads[i] / rate } else { f64::INFINITY };
            states[i] = Some(ModeState { beta, rate });
        }
    }
    Ok((sum, states))
}

/// Solves the ergodic problem for explicit per-mode loads and gain laws.
pub fn solve_ergodic_for_loads(
    dists: &[ChannelDistribution; NUM_MODES],
    loads: [f64; NUM_MODES],
) -> Result<ErgodicSolution> {
    for d in dists {
        d.validate()?;
    }
    if loads.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput(format!("loads must be finite and >= 0: {loads:?}")));
    }
    if loads.iter().all(|&l| l == 0.0) {
        return Err(Error::InvalidInput("both arrival rates are zero".into()));
    }
    let active: [bool; NUM_MODES] = std::array::from_fn(|i| loads[i] > 0.0);
    let mut monotone = [true; NUM_MODES];
    for i in 0..NUM_MODES {
        if active[i] {
            monotone[i] = scan_is_monotone(&dists[i])?;
        }
    }

    let sum_at = |gamma: f64| modes_at_gamma(gamma, dists, &loads, &monotone).map(|(s, _)| s);
    let mut lo = 1e-6;
    while sum_at(lo)? <= 1.0 {
        lo *= 1e-3;
        if lo < 1e-200 {
            return Err(Error::InvalidInput("loads too small to resolve".into()));
        }
    }
    let mut hi = 1.0_f64.max(2.0 * lo);
    while sum_at(hi)? >= 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > GAMMA_CAP {
            return Err(Error::Infeasible { cap: GAMMA_CAP });
        }
    }
    for _ in 0..200 {
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let s = sum_at(mid)?;
        if (s - 1.0).abs() <= 1e-13 {
            lo = mid;
            hi = mid;
            break;
        }
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let (_, states) = modes_at_gamma(gamma, dists, &loads, &monotone)?;

    let mut fractions = [0.0; NUM_MODES];
    let mut rates = [0.0; NUM_MODES];
    let mut powers = [0.0; NUM_MODES];
    let mut betas = [0.0; NUM_MODES];
    let mut residuals = [0.0; NUM_MODES];
    for i in 0..NUM_MODES {
        if let Some(st) = &states[i] {
            let p = avg_power(st.beta, &dists[i])?;
            betas[i] = st.beta;
            rates[i] = st.rate;
            powers[i] = p;
            fractions[i] = loads[i] / st.rate;
            residuals[i] = (st.beta * st.rate - p - gamma).abs();
        }
    }
    let total_energy = fractions.iter().zip(&powers).map(|(f, p)| f * p).sum();
    Ok(ErgodicSolution {
        allocation: Allocation {
            fractions,
            rates,
            powers,
            multipliers: Multipliers::Ergodic { betas, gamma },
            total_energy,
        },
        betas,
        gamma,
        active,
        loads,
        kkt_residuals: residuals,
        distributions: dists.clone(),
        balance_monotone: monotone.iter().all(|&m| m),
    })
}

/// Minimum long-run energy with network-coded broadcast.
pub fn solve_ergodic(dists: &[ChannelDistribution; NUM_MODES], rates: &ArrivalRates) -> Result<ErgodicSolution> {
    rates.validate()?;
    solve_ergodic_for_loads(dists, rates.mode_loads())
}

/// Fading baseline without the broadcast mode.
pub fn solve_ergodic_conventional(
    dists: &[ChannelDistribution; NUM_MODES],
    rates: &ArrivalRates,
) -> Result<ErgodicSolution> {
    rates.validate()?;
    solve_ergodic_for_loads(dists, rates.conventional_loads())
}

/// Mean energy of re-solving the static problem for each of `draws` channel
/// realizations.
pub fn static_energy_over_draws(
    channel: &FadingChannel,
    rates: &ArrivalRates,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let u: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
        let gains = channel.gains_from_uniforms(u)?;
        total += solve_static(&gains, rates)?.energy();
    }
    Ok(total / draws as f64)
}
