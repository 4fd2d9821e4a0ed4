//! Domain types shared by the solvers, the queue analysis and the simulator.
//!
//! Gains are linear power gains normalized by unit receiver noise, so the
//! SNR of mode `i` at power `P` is `P * g_i`. Arrays indexed by mode use
//! `Mode::index()` (mode 1 is index 0).

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_MODES: usize = 5;

/// One of the five link activities the relay time-shares between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// S1 -> R uplink.
    Uplink1,
    /// S2 -> R uplink.
    Uplink2,
    /// R -> {S1, S2} network-coded broadcast.
    Broadcast,
    /// R -> S1 one-way forwarding.
    Forward1,
    /// R -> S2 one-way forwarding.
    Forward2,
}

impl Mode {
    pub const ALL: [Mode; NUM_MODES] = [
        Mode::Uplink1,
        Mode::Uplink2,
        Mode::Broadcast,
        Mode::Forward1,
        Mode::Forward2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Mode> {
        Self::ALL.get(i).copied()
    }

    /// 1-based mode number.
    pub fn number(self) -> usize {
        self.index() + 1
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode {}", self.number())
    }
}

fn check_gain(g: f64) -> Result<f64> {
    if g.is_finite() && g > 0.0 {
        Ok(g)
    } else {
        Err(Error::NonPositiveGain(g))
    }
}

/// Static link gains. The broadcast gain is derived as the weaker of the
/// two downlinks since the coded packet has to reach both sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinkGains", into = "LinkGains")]
pub struct ChannelGains {
    modes: [f64; NUM_MODES],
}

/// Serialized form of [`ChannelGains`]: the four physical links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGains {
    pub g1r: f64,
    pub g2r: f64,
    pub gr1: f64,
    pub gr2: f64,
}

impl TryFrom<LinkGains> for ChannelGains {
    type Error = Error;

    fn try_from(l: LinkGains) -> Result<Self> {
        ChannelGains::new(l.g1r, l.g2r, l.gr1, l.gr2)
    }
}

impl From<ChannelGains> for LinkGains {
    fn from(g: ChannelGains) -> Self {
        LinkGains {
            g1r: g.modes[0],
            g2r: g.modes[1],
            gr1: g.modes[3],
            gr2: g.modes[4],
        }
    }
}

impl ChannelGains {
    /// Builds gains from the uplinks `g1r`, `g2r` and downlinks `gr1`, `gr2`.
    pub fn new(g1r: f64, g2r: f64, gr1: f64, gr2: f64) -> Result<Self> {
        let (g1, g2, g4, g5) = (
            check_gain(g1r)?,
            check_gain(g2r)?,
            check_gain(gr1)?,
            check_gain(gr2)?,
        );
        Ok(ChannelGains {
            modes: [g1, g2, g4.min(g5), g4, g5],
        })
    }

    pub fn uniform(g: f64) -> Result<Self> {
        Self::new(g, g, g, g)
    }

    /// Divides every gain by an SNR gap `gap >= 1` (a coding-loss margin).
    pub fn with_snr_gap(self, gap: f64) -> Result<Self> {
        if !(gap.is_finite() && gap > 0.0) {
            return Err(Error::InvalidInput(format!("SNR gap must be positive, got {gap}")));
        }
        let l = LinkGains::from(self);
        Self::new(l.g1r / gap, l.g2r / gap, l.gr1 / gap, l.gr2 / gap)
    }

    pub fn gain(&self, mode: Mode) -> f64 {
        self.modes[mode.index()]
    }

    pub fn as_array(&self) -> [f64; NUM_MODES] {
        self.modes
    }
}

/// Marginal density of a fading power gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelDistribution {
    /// Exponential power gain (Rayleigh amplitude) with the given mean.
    Rayleigh { mean: f64 },
    /// Piecewise-constant density: `probs[k]` is the mass on `[edges[k], edges[k+1])`.
    Histogram { edges: Vec<f64>, probs: Vec<f64> },
    /// Law of `min(X, Y)` for independent `X`, `Y`.
    MinOf {
        a: Box<ChannelDistribution>,
        b: Box<ChannelDistribution>,
    },
}

impl ChannelDistribution {
    pub fn rayleigh(mean: f64) -> Result<Self> {
        let d = ChannelDistribution::Rayleigh { mean };
        d.validate()?;
        Ok(d)
    }

    pub fn histogram(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let d = ChannelDistribution::Histogram { edges, probs };
        d.validate()?;
        Ok(d)
    }

    /// Distribution of the weaker of two independent gains. Two exponentials
    /// collapse to an exponential with mean `ab / (a + b)`.
    pub fn min_of(a: &ChannelDistribution, b: &ChannelDistribution) -> Self {
        match (a, b) {
            (ChannelDistribution::Rayleigh { mean: ma }, ChannelDistribution::Rayleigh { mean: mb }) => {
                ChannelDistribution::Rayleigh {
                    mean: ma * mb / (ma + mb),
                }
            }
            _ => ChannelDistribution::MinOf {
                a: Box::new(a.clone()),
                b: Box::new(b.clone()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelDistribution::Rayleigh { mean } => {
                check_gain(*mean)?;
            }
            ChannelDistribution::Histogram { edges, probs } => {
                if edges.len() != probs.len() + 1 || probs.is_empty() {
                    return Err(Error::InvalidInput(
                        "histogram needs len(edges) == len(probs) + 1 >= 2".into(),
                    ));
                }
                if edges[0] < 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput(
                        "histogram edges must be nonnegative and strictly increasing".into(),
                    ));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::InvalidInput("histogram masses must be nonnegative".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "histogram masses sum to {total}, expected 1"
                    )));
                }
            }
            ChannelDistribution::MinOf { a, b } => {
                a.validate()?;
                b.validate()?;
            }
        }
        Ok(())
    }

    pub fn pdf(&self, g: f64) -> f64 {
        if g < 0.0 {
            return 0.0;
        }
        match self {
            ChannelDistribution::Rayleigh { mean } => (-g / mean).exp() / mean,
            ChannelDistribution::Histogram { edges, probs } => match bin_of(edges, g) {
                Some(k) => probs[k] / (edges[k + 1] - edges[k]),
                None => 0.0,
            },
            ChannelDistribution::MinOf { a, b } => {
                a.pdf(g) * b.survival(g) + b.pdf(g) * a.survival(g)
            }
        }
    }

    pub fn cdf(&self, g: f64) -> f64 {
        1.0 - self.survival(g)
    }

    /// `Pr[G > g]`, computed directly to keep precision in the tail.
    pub fn survival(&self, g: f64) -> f64 {
        if g <= 0.0 {
            return 1.0;
        }
        match self {
            ChannelDistribution::Rayleigh { mean } => (-g / mean).exp(),
            ChannelDistribution::Histogram { edges, probs } => {
                if g >= edges[edges.len() - 1] {
                    return 0.0;
                }
                if g <= edges[0] {
                    return 1.0;
                }
                let k = bin_of(edges, g).expect("g inside support");
                let frac = (edges[k + 1] - g) / (edges[k + 1] - edges[k]);
                probs[k] * frac + probs[k + 1..].iter().sum::<f64>()
            }
            ChannelDistribution::MinOf { a, b } => a.survival(g) * b.survival(g),
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            ChannelDistribution::Rayleigh { mean } => -mean * (-u).ln_1p(),
            ChannelDistribution::Histogram { edges, probs } => {
                let mut acc = 0.0;
                for (k, &p) in probs.iter().enumerate() {
                    if p > 0.0 && acc + p >= u {
                        let t = ((u - acc) / p).clamp(0.0, 1.0);
                        return edges[k] + t * (edges[k + 1] - edges[k]);
                    }
                    acc += p;
                }
                edges[edges.len() - 1]
            }
            ChannelDistribution::MinOf { .. } => {
                // survival is continuous and decreasing; invert by bisection
                let target = 1.0 - u;
                let mut lo = 0.0;
                let mut hi = self.tail_bound(0.0, 1e-17);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.survival(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// A point beyond which the mass above `from` is at most `rel` times
    /// the mass above `from` (or the end of the support).
    pub fn tail_bound(&self, from: f64, rel: f64) -> f64 {
        match self {
            ChannelDistribution::Rayleigh { mean } => from.max(0.0) + mean * (1.0 / rel).ln(),
            ChannelDistribution::Histogram { edges, .. } => edges[edges.len() - 1].max(from),
            ChannelDistribution::MinOf { a, b } => a.tail_bound(from, rel).min(b.tail_bound(from, rel)),
        }
    }

    /// Points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ChannelDistribution::Rayleigh { .. } => Vec::new(),
            ChannelDistribution::Histogram { edges, .. } => edges.clone(),
            ChannelDistribution::MinOf { a, b } => {
                let mut v = a.breakpoints();
                v.extend(b.breakpoints());
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
        }
    }

    pub fn mean_gain(&self) -> f64 {
        match self {
            ChannelDistribution::Rayleigh { mean } => *mean,
            ChannelDistribution::Histogram { edges, probs } => probs
                .iter()
                .enumerate()
                .map(|(k, p)| p * 0.5 * (edges[k] + edges[k + 1]))
                .sum(),
            ChannelDistribution::MinOf { .. } => {
                let hi = self.tail_bound(0.0, 1e-16);
                crate::quad::integrate(|g| self.survival(g), 0.0, hi, &self.breakpoints(), 1e-12)
                    .map(|q| q.value)
                    .unwrap_or(f64::NAN)
            }
        }
    }
}

fn bin_of(edges: &[f64], g: f64) -> Option<usize> {
    if g < edges[0] || g >= edges[edges.len() - 1] {
        return None;
    }
    let k = edges.partition_point(|&e| e <= g);
    Some(k - 1)
}

/// Fading statistics of the four physical links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingChannel {
    pub g1r: ChannelDistribution,
    pub g2r: ChannelDistribution,
    pub gr1: ChannelDistribution,
    pub gr2: ChannelDistribution,
}

impl FadingChannel {
    pub fn rayleigh(g1r: f64, g2r: f64, gr1: f64, gr2: f64) -> Result<Self> {
        Ok(FadingChannel {
            g1r: ChannelDistribution::rayleigh(g1r)?,
            g2r: ChannelDistribution::rayleigh(g2r)?,
            gr1: ChannelDistribution::rayleigh(gr1)?,
            gr2: ChannelDistribution::rayleigh(gr2)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for d in [&self.g1r, &self.g2r, &self.gr1, &self.gr2] {
            d.validate()?;
        }
        Ok(())
    }

    /// Per-mode gain laws; the broadcast mode sees the weaker downlink.
    pub fn mode_distributions(&self) -> [ChannelDistribution; NUM_MODES] {
        [
            self.g1r.clone(),
            self.g2r.clone(),
            ChannelDistribution::min_of(&self.gr1, &self.gr2),
            self.gr1.clone(),
            self.gr2.clone(),
        ]
    }

    /// Draws one realization of the four links from uniforms `u`.
    pub fn gains_from_uniforms(&self, u: [f64; 4]) -> Result<ChannelGains> {
        ChannelGains::new(
            self.g1r.quantile(u[0]).max(f64::MIN_POSITIVE),
            self.g2r.quantile(u[1]).max(f64::MIN_POSITIVE),
            self.gr1.quantile(u[2]).max(f64::MIN_POSITIVE),
            self.gr2.quantile(u[3]).max(f64::MIN_POSITIVE),
        )
    }
}

/// Poisson packet arrival rates at the two sources plus the design back-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRates {
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl ArrivalRates {
    pub fn new(lambda1: f64, lambda2: f64, epsilon: f64) -> Result<Self> {
        let r = ArrivalRates {
            lambda1,
            lambda2,
            epsilon,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Rates the allocation is designed for: `lambda_i * (1 + epsilon)`.
    pub fn design(&self) -> (f64, f64) {
        let s = 1.0 + self.epsilon;
        (self.lambda1 * s, self.lambda2 * s)
    }

    /// Per-mode loads with network coding, from the design rates.
    pub fn mode_loads(&self) -> [f64; NUM_MODES] {
        let (l1, l2) = self.design();
        let (l3, l4, l5) = virtual_rates(l1, l2);
        [l1, l2, l3, l4, l5]
    }

    /// Per-mode loads of plain two-hop forwarding (no broadcast mode).
    pub fn conventional_loads(&self) -> [f64; NUM_MODES] {
        let (l1, l2) = self.design();
        [l1, l2, 0.0, l2, l1]
    }
}

/// Transmit power that supports `rate` bits per channel use at gain `gain`.
pub fn power_for_rate(rate: f64, gain: f64) -> Result<f64> {
    check_gain(gain)?;
    if !(rate >= 0.0) {
        return Err(Error::InvalidInput(format!("rate must be >= 0, got {rate}")));
    }
    Ok((rate * LN_2).exp_m1() / gain)
}

/// Broadcast load and the residual one-way loads towards S1 and S2.
pub fn virtual_rates(lambda1: f64, lambda2: f64) -> (f64, f64, f64) {
    (
        lambda1.min(lambda2),
        (lambda2 - lambda1).max(0.0),
        (lambda1 - lambda2).max(0.0),
    )
}

/// Lagrange multipliers attached to an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Multipliers {
    /// One multiplier on the time budget.
    Static { beta: f64 },
    /// Per-mode throughput multipliers and the time-budget multiplier.
    Ergodic { betas: [f64; NUM_MODES], gamma: f64 },
}

/// Time fractions, rates and powers per mode. For ergodic solutions the
/// rates and powers are averages over the fading law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub fractions: [f64; NUM_MODES],
    pub rates: [f64; NUM_MODES],
    pub powers: [f64; NUM_MODES],
    pub multipliers: Multipliers,
    pub total_energy: f64,
}

impl Allocation {
    pub fn fraction(&self, mode: Mode) -> f64 {
        self.fractions[mode.index()]
    }

    pub fn fraction_sum(&self) -> f64 {
        self.fractions.iter().sum()
    }

    /// Energy per slot `sum f_i P_i` recomputed from the stored fields.
    pub fn energy(&self) -> f64 {
        self.fractions
            .iter()
            .zip(&self.powers)
            .map(|(f, p)| f * p)
            .sum()
    }
}
