//! Truncated two-dimensional chains over (source queue, relay queue).
//!
//! The first pair tracks `(Q1, Qr2)`: S1's buffer and the relay's buffer of
//! S1's packets awaiting delivery to S2. The second pair mirrors it with
//! `(Q2, Qr1)`. In a slot the selected mode serves first, then the slot's
//! Poisson arrivals join the source queue. Transitions that would leave the
//! truncation box are folded onto its boundary.

use serde::{Deserialize, Serialize};

use crate::ergodic_opt::{packets_needed, ErgodicSolution};
use crate::error::{Error, Result};
use crate::model::{ArrivalRates, Mode, NUM_MODES};
use crate::static_opt::StaticSolution;

use super::sparse::SparseMatrix;

/// Arrival pmfs are cut where the cumulative mass first exceeds `1 - ARRIVAL_TAIL`.
pub const ARRIVAL_TAIL: f64 = 1e-12;

/// Rate-level laws are cut where less than this mass remains in the tail.
pub const LEVEL_TAIL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueuePair {
    /// `(Q1, Qr2)`: uplink 1, broadcast, forwarding to S2.
    First,
    /// `(Q2, Qr1)`: uplink 2, broadcast, forwarding to S1.
    Second,
}

impl QueuePair {
    pub fn source_mode(self) -> Mode {
        match self {
            QueuePair::First => Mode::Uplink1,
            QueuePair::Second => Mode::Uplink2,
        }
    }

    /// One-way mode that drains this pair's relay queue.
    pub fn forward_mode(self) -> Mode {
        match self {
            QueuePair::First => Mode::Forward2,
            QueuePair::Second => Mode::Forward1,
        }
    }

    pub fn arrival_rate(self, rates: &ArrivalRates) -> f64 {
        match self {
            QueuePair::First => rates.lambda1,
            QueuePair::Second => rates.lambda2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    /// Largest source backlog represented.
    pub source_max: usize,
    /// Largest relay backlog represented.
    pub relay_max: usize,
}

impl Truncation {
    pub fn square(n: usize) -> Self {
        Truncation {
            source_max: n,
            relay_max: n,
        }
    }
}

/// Packets each relevant mode can carry in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ServiceLaw {
    /// Fixed packet counts (static channel).
    Fixed { source: u32, broadcast: u32, forward: u32 },
    /// Packet-count distributions: `c_n`, `r_n`, `q_n` (fading channel).
    Levels {
        source: Vec<f64>,
        broadcast: Vec<f64>,
        forward: Vec<f64>,
    },
}

/// Poisson(`mean`) pmf with the tail folded into the last entry.
pub fn arrival_pmf(mean: f64) -> Result<Vec<f64>> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::InvalidInput(format!("arrival mean must be >= 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(vec![1.0]);
    }
    let mut pmf = Vec::new();
    let mut term = (-mean).exp();
    let mut acc = 0.0;
    let mut j = 0usize;
    loop {
        pmf.push(term);
        acc += term;
        if acc > 1.0 - ARRIVAL_TAIL || j > 10_000 {
            break;
        }
        j += 1;
        term *= mean / j as f64;
    }
    let head: f64 = pmf[..pmf.len() - 1].iter().sum();
    *pmf.last_mut().expect("nonempty") = 1.0 - head;
    Ok(pmf)
}

#[derive(Debug, Clone)]
pub struct QueueChain {
    pub pair: QueuePair,
    pub truncation: Truncation,
    /// Flattening width: state `(i, j)` has index `i * width + j`.
    pub width: usize,
    pub arrival_pmf: Vec<f64>,
    /// Mode probabilities, renormalized to sum to one.
    pub fractions: [f64; NUM_MODES],
    pub service: ServiceLaw,
    pub matrix: SparseMatrix,
}

impl QueueChain {
    pub fn num_states(&self) -> usize {
        (self.truncation.source_max + 1) * self.width
    }

    pub fn index(&self, source: usize, relay: usize) -> usize {
        source * self.width + relay
    }

    pub fn state(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn probability(&self, from: (usize, usize), to: (usize, usize)) -> f64 {
        self.matrix.get(self.index(from.0, from.1), self.index(to.0, to.1))
    }

    /// State order that groups states by relay backlog. Relay backlogs move
    /// by a few packets per slot, so this ordering usually gives the
    /// narrower band.
    pub fn relay_major_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_states());
        for j in 0..=self.truncation.relay_max {
            for i in 0..=self.truncation.source_max {
                order.push(self.index(i, j));
            }
        }
        order
    }
}

struct Weights {
    source: f64,
    broadcast: f64,
    forward: f64,
    idle: f64,
}

fn pair_weights(fractions: &[f64; NUM_MODES], pair: QueuePair) -> Result<([f64; NUM_MODES], Weights)> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "mode probabilities must be nonnegative and sum to 1, got sum {sum}"
        )));
    }
    let f: [f64; NUM_MODES] = std::array::from_fn(|i| fractions[i] / sum);
    let source = f[pair.source_mode().index()];
    let broadcast = f[Mode::Broadcast.index()];
    let forward = f[pair.forward_mode().index()];
    let idle = (1.0 - source - broadcast - forward).max(0.0);
    Ok((
        f,
        Weights {
            source,
            broadcast,
            forward,
            idle,
        },
    ))
}

struct RowBuilder {
    source_max: usize,
    relay_max: usize,
    width: usize,
    entries: Vec<(usize, f64)>,
}

impl RowBuilder {
    fn push(&mut self, source: usize, relay: usize, p: f64) {
        if p > 0.0 {
            let i = source.min(self.source_max);
            let j = relay.min(self.relay_max);
            self.entries.push((i * self.width + j, p));
        }
    }

    fn push_arrivals(&mut self, base: usize, relay: usize, weight: f64, pmf: &[f64]) {
        if weight > 0.0 {
            for (a, pa) in pmf.iter().enumerate() {
                self.push(base + a, relay, weight * pa);
            }
        }
    }
}

fn assemble(
    trunc: Truncation,
    pmf: &[f64],
    mut row: impl FnMut(usize, usize, &mut RowBuilder),
) -> SparseMatrix {
    let width = trunc.relay_max + 1;
    let n = (trunc.source_max + 1) * width;
    let mut rows = Vec::with_capacity(n);
    let mut builder = RowBuilder {
        source_max: trunc.source_max,
        relay_max: trunc.relay_max,
        width,
        entries: Vec::with_capacity(8 * pmf.len()),
    };
    for m in 0..=trunc.source_max {
        for k in 0..=trunc.relay_max {
            builder.entries.clear();
            row(m, k, &mut builder);
            rows.push(builder.entries.clone());
        }
    }
    SparseMatrix::from_rows(n, rows)
}

fn check_truncation(trunc: Truncation) -> Result<()> {
    if trunc.source_max == 0 || trunc.relay_max == 0 {
        return Err(Error::InvalidInput("truncation bounds must be >= 1".into()));
    }
    if (trunc.source_max + 1).saturating_mul(trunc.relay_max + 1) > 50_000_000 {
        return Err(Error::InvalidInput("truncation too large".into()));
    }
    Ok(())
}

/// Chain of one queue pair under fixed per-slot service counts, mixing the
/// four transition classes: source uplink, broadcast, modes that leave the
/// relay queue alone, and one-way forwarding.
pub fn build_static_chain(
    solution: &StaticSolution,
    rates: &ArrivalRates,
    pair: QueuePair,
    trunc: Truncation,
    slot_duration: f64,
) -> Result<QueueChain> {
    check_truncation(trunc)?;
    let (fractions, w) = pair_weights(&solution.allocation.fractions, pair)?;
    let pmf = arrival_pmf(pair.arrival_rate(rates) * slot_duration)?;
    let s_src = solution.service_packets(pair.source_mode()) as usize;
    let s_bc = solution.service_packets(Mode::Broadcast) as usize;
    let s_fwd = solution.service_packets(pair.forward_mode()) as usize;

    let matrix = assemble(trunc, &pmf, |m, k, row| {
        // uplink: Q1 at most s_src packets move to the relay
        let (left, moved) = if m == 0 {
            (0, 0)
        } else if m < s_src {
            (0, m)
        } else {
            (m - s_src, s_src)
        };
        row.push_arrivals(left, k + moved, w.source, &pmf);
        // broadcast / forwarding: relay queue drains by up to s packets
        for (weight, s) in [(w.broadcast, s_bc), (w.forward, s_fwd)] {
            let after = k.saturating_sub(s);
            row.push_arrivals(m, after, weight, &pmf);
        }
        // the other uplink and the other forwarding mode
        row.push_arrivals(m, k, w.idle, &pmf);
    });

    Ok(QueueChain {
        pair,
        truncation: trunc,
        width: trunc.relay_max + 1,
        arrival_pmf: pmf,
        fractions,
        service: ServiceLaw::Fixed {
            source: s_src as u32,
            broadcast: s_bc as u32,
            forward: s_fwd as u32,
        },
        matrix,
    })
}

fn level(v: &[f64], n: usize) -> f64 {
    v.get(n).copied().unwrap_or(0.0)
}

fn tail_from(v: &[f64], n: usize) -> f64 {
    if n >= v.len() {
        0.0
    } else {
        v[n..].iter().sum()
    }
}

/// Chain under random per-slot service counts, written out branch by branch
/// over `(m, k) -> (i, j)`.
///
/// `source`, `broadcast` and `forward` are the packet-count laws of the
/// pair's uplink, the broadcast mode and its forwarding mode.
pub fn build_chain_from_levels(
    fractions: &[f64; NUM_MODES],
    arrival_mean: f64,
    pair: QueuePair,
    source: Vec<f64>,
    broadcast: Vec<f64>,
    forward: Vec<f64>,
    trunc: Truncation,
) -> Result<QueueChain> {
    check_truncation(trunc)?;
    for (name, v) in [("source", &source), ("broadcast", &broadcast), ("forward", &forward)] {
        let s: f64 = v.iter().sum();
        if v.is_empty() || v.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("{name} rate levels must be a pmf (sum {s})")));
        }
    }
    let (fractions, w) = pair_weights(fractions, pair)?;
    let pmf = arrival_pmf(arrival_mean)?;
    let (c, r, q) = (&source, &broadcast, &forward);

    let matrix = assemble(trunc, &pmf, |m, k, row| {
        if m == 0 && k == 0 {
            row.push_arrivals(0, 0, 1.0, &pmf);
            return;
        }
        if k > 0 {
            // relay drains n packets, 0 < n < k
            for n in 1..k {
                let weight = w.broadcast * level(r, n) + w.forward * level(q, n);
                row.push_arrivals(m, k - n, weight, &pmf);
            }
            // relay empties
            let weight = w.broadcast * tail_from(r, k) + w.forward * tail_from(q, k);
            row.push_arrivals(m, 0, weight, &pmf);
        }
        // nothing moves: other modes, empty source, or zero-packet slots
        let source_idle = if m == 0 { 1.0 } else { level(c, 0) };
        let relay_idle = if k == 0 {
            w.broadcast + w.forward
        } else {
            w.broadcast * level(r, 0) + w.forward * level(q, 0)
        };
        row.push_arrivals(m, k, w.idle + w.source * source_idle + relay_idle, &pmf);
        if m > 0 {
            // uplink delivers n < m packets
            for n in 1..m {
                row.push_arrivals(m - n, k + n, w.source * level(c, n), &pmf);
            }
            // uplink clears the whole backlog
            row.push_arrivals(0, k + m, w.source * tail_from(c, m), &pmf);
        }
    });

    Ok(QueueChain {
        pair,
        truncation: trunc,
        width: trunc.relay_max + 1,
        arrival_pmf: pmf,
        fractions,
        service: ServiceLaw::Levels {
            source,
            broadcast,
            forward,
        },
        matrix,
    })
}

/// Chain of one queue pair under the water-filling policy, using the
/// packet-count laws of the uplink, broadcast and forwarding modes.
pub fn build_fading_chain(
    solution: &ErgodicSolution,
    rates: &ArrivalRates,
    pair: QueuePair,
    trunc: Truncation,
    slot_duration: f64,
) -> Result<QueueChain> {
    let levels = |mode: Mode| -> Result<Vec<f64>> {
        let i = mode.index();
        let n = if solution.active[i] {
            packets_needed(solution.betas[i], &solution.distributions[i], LEVEL_TAIL)
        } else {
            1
        };
        solution.rate_levels(mode, n)
    };
    build_chain_from_levels(
        &solution.allocation.fractions,
        pair.arrival_rate(rates) * slot_duration,
        pair,
        levels(pair.source_mode())?,
        levels(Mode::Broadcast)?,
        levels(pair.forward_mode())?,
        trunc,
    )
}

/// Point mass at `n` packets.
pub fn point_levels(n: u32) -> Vec<f64> {
    let mut v = vec![0.0; n as usize + 1];
    v[n as usize] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelGains;
    use crate::static_opt::solve_static;

    fn unit_solution(eps: f64) -> StaticSolution {
        solve_static(
            &ChannelGains::uniform(1.0).unwrap(),
            &ArrivalRates::new(0.5, 1.0, eps).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn arrival_pmf_sums_to_one() {
        for mean in [0.0, 0.3, 1.0, 4.5, 30.0] {
            let p = arrival_pmf(mean).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let p = arrival_pmf(0.5).unwrap();
        assert!((p[1] - 0.5 * (-0.5f64).exp()).abs() < 1e-16);
        assert!(arrival_pmf(-1.0).is_err());
    }

    #[test]
    fn static_rows_are_stochastic() {
        let sol = unit_solution(0.5);
        let rates = ArrivalRates::new(0.5, 1.0, 0.5).unwrap();
        for pair in [QueuePair::First, QueuePair::Second] {
            let ch = build_static_chain(&sol, &rates, pair, Truncation::square(20), 1.0).unwrap();
            assert!(ch.matrix.max_row_sum_error() < 1e-12);
        }
    }

    #[test]
    fn uplink_only_class() {
        // all time on the uplink, one packet per slot
        let mut sol = unit_solution(0.5);
        sol.allocation.fractions = [1.0, 0.0, 0.0, 0.0, 0.0];
        sol.allocation.rates[0] = 1.2;
        let rates = ArrivalRates::new(0.5, 1.0, 0.0).unwrap();
        let ch = build_static_chain(&sol, &rates, QueuePair::First, Truncation::square(10), 1.0).unwrap();
        let a = &ch.arrival_pmf;
        // empty source: relay unchanged, source = arrivals
        assert!((ch.probability((0, 3), (2, 3)) - a[2]).abs() < 1e-15);
        assert_eq!(ch.probability((0, 3), (2, 4)), 0.0);
        // m >= 1: one packet moves
        assert!((ch.probability((4, 3), (4, 4)) - a[1]).abs() < 1e-15);
    }

    #[test]
    fn point_mass_levels_reproduce_static_chain() {
        let sol = unit_solution(0.5);
        let rates = ArrivalRates::new(0.5, 1.0, 0.5).unwrap();
        let trunc = Truncation {
            source_max: 15,
            relay_max: 12,
        };
        for pair in [QueuePair::First, QueuePair::Second] {
            let st = build_static_chain(&sol, &rates, pair, trunc, 1.0).unwrap();
            let fd = build_chain_from_levels(
                &sol.allocation.fractions,
                pair.arrival_rate(&rates),
                pair,
                point_levels(sol.service_packets(pair.source_mode())),
                point_levels(sol.service_packets(Mode::Broadcast)),
                point_levels(sol.service_packets(pair.forward_mode())),
                trunc,
            )
            .unwrap();
            assert!(st.matrix.max_abs_diff(&fd.matrix) <= 1e-12);
        }
    }

    #[test]
    fn rejects_unnormalized_fractions() {
        let mut sol = unit_solution(0.5);
        sol.allocation.fractions[0] += 0.1;
        let rates = ArrivalRates::new(0.5, 1.0, 0.5).unwrap();
        assert!(build_static_chain(&sol, &rates, QueuePair::First, Truncation::square(5), 1.0).is_err());
    }
}
