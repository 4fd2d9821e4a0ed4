//! Queue metrics from stationary laws, automatic truncation growth, and
//! the long-run energy actually spent per slot.

use serde::{Deserialize, Serialize};

use crate::ergodic_opt::ErgodicSolution;
use crate::error::{Error, Result};
use crate::model::{ArrivalRates, Mode, NUM_MODES};
use crate::static_opt::StaticSolution;

use super::chain::{build_fading_chain, build_static_chain, QueueChain, QueuePair, Truncation};
use super::stationary::{band_cells, stationary_distribution, SolveMethod, MAX_BAND_CELLS};

/// Boundary mass above which the metrics carry a warning.
pub const BOUNDARY_WARN: f64 = 1e-3;
/// Boundary mass the automatic truncation aims for.
pub const BOUNDARY_TARGET: f64 = 1e-6;
pub const DEFAULT_TRUNCATION: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueMetrics {
    pub pair: QueuePair,
    pub truncation: Truncation,
    pub mean_source: f64,
    pub mean_relay: f64,
    /// Stationary mass within two states of either truncation edge.
    pub boundary_mass: f64,
    pub residual: f64,
    pub method: SolveMethod,
    pub source_marginal: Vec<f64>,
    pub relay_marginal: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
    #[serde(skip)]
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub truncation: Truncation,
    /// Double the offending bound until the boundary mass falls below `target_boundary`.
    pub auto_truncate: bool,
    pub target_boundary: f64,
    /// Largest chain the doubling may reach.
    pub max_states: usize,
    pub slot_duration: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            truncation: Truncation::square(DEFAULT_TRUNCATION),
            auto_truncate: true,
            target_boundary: BOUNDARY_TARGET,
            max_states: 70_000,
            slot_duration: 1.0,
        }
    }
}

impl AnalysisOptions {
    pub fn fixed(truncation: Truncation) -> Self {
        AnalysisOptions {
            truncation,
            auto_truncate: false,
            ..Default::default()
        }
    }
}

pub fn mean_queue_lengths(pi: &[f64], chain: &QueueChain) -> (f64, f64) {
    let (mut qs, mut qr) = (0.0, 0.0);
    for (idx, &p) in pi.iter().enumerate() {
        let (i, j) = chain.state(idx);
        qs += i as f64 * p;
        qr += j as f64 * p;
    }
    (qs, qr)
}

fn marginals(pi: &[f64], chain: &QueueChain) -> (Vec<f64>, Vec<f64>) {
    let mut src = vec![0.0; chain.truncation.source_max + 1];
    let mut rel = vec![0.0; chain.truncation.relay_max + 1];
    for (idx, &p) in pi.iter().enumerate() {
        let (i, j) = chain.state(idx);
        src[i] += p;
        rel[j] += p;
    }
    (src, rel)
}

fn edge_mass(marginal: &[f64]) -> f64 {
    let n = marginal.len();
    marginal[n.saturating_sub(2)..].iter().sum()
}

/// Solves one chain and summarizes it.
pub fn metrics(chain: &QueueChain) -> Result<QueueMetrics> {
    let st = stationary_distribution(&chain.matrix, &[chain.relay_major_order()])?;
    let (mean_source, mean_relay) = mean_queue_lengths(&st.pi, chain);
    let (source_marginal, relay_marginal) = marginals(&st.pi, chain);
    let src_edge = edge_mass(&source_marginal);
    let rel_edge = edge_mass(&relay_marginal);
    // union of the two edge strips
    let corner: f64 = st
        .pi
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            let (i, j) = chain.state(*idx);
            i + 1 >= chain.truncation.source_max && j + 1 >= chain.truncation.relay_max
        })
        .map(|(_, p)| p)
        .sum();
    let boundary_mass = src_edge + rel_edge - corner;
    let warning = (boundary_mass > BOUNDARY_WARN).then(|| {
        format!(
            "boundary mass {boundary_mass:.3e} at truncation ({}, {}); queue means are unreliable",
            chain.truncation.source_max, chain.truncation.relay_max
        )
    });
    Ok(QueueMetrics {
        pair: chain.pair,
        truncation: chain.truncation,
        mean_source,
        mean_relay,
        boundary_mass,
        residual: st.residual,
        method: st.method,
        source_marginal,
        relay_marginal,
        warning,
        pi: st.pi,
    })
}

/// Builds and solves a chain, growing the truncation while too much mass
/// sits near an edge.
pub fn analyze_with<F>(mut build: F, opts: &AnalysisOptions) -> Result<QueueMetrics>
where
    F: FnMut(Truncation) -> Result<QueueChain>,
{
    let mut trunc = opts.truncation;
    let mut previous: Option<QueueMetrics> = None;
    loop {
        let chain = build(trunc)?;
        if let Some(prev) = previous.take() {
            // growth stops where the direct solve would run out of memory
            if band_cells(&chain.matrix, &[chain.relay_major_order()])? > MAX_BAND_CELLS {
                return Ok(prev);
            }
        }
        let m = metrics(&chain)?;
        if !opts.auto_truncate || m.boundary_mass < opts.target_boundary {
            return Ok(m);
        }
        let src_edge = edge_mass(&m.source_marginal);
        let rel_edge = edge_mass(&m.relay_marginal);
        let mut next = trunc;
        if src_edge >= opts.target_boundary {
            next.source_max *= 2;
        }
        if rel_edge >= opts.target_boundary {
            next.relay_max *= 2;
        }
        if next == trunc {
            next.source_max *= 2;
            next.relay_max *= 2;
        }
        if (next.source_max + 1) * (next.relay_max + 1) > opts.max_states {
            return Ok(m);
        }
        previous = Some(m);
        trunc = next;
    }
}

/// Energy of one transmission slot given the backlog `q` it may draw on.
/// A backlog of at least `cap` packets uses the full power `full`.
fn slot_energy(q: usize, cap: u32, full: f64, gain: f64) -> f64 {
    if q == 0 {
        0.0
    } else if q >= cap as usize {
        full
    } else {
        ((q as f64).exp2() - 1.0) / gain
    }
}

/// Per-mode actual energies `E'_i` and the total `sum f_i E'_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActualEnergy {
    pub per_mode: [f64; NUM_MODES],
    pub total: f64,
    /// `sum f_i P_i`, the allocation's objective.
    pub design: f64,
}

/// Long-run energy per slot from the stationary marginals of both pairs.
/// The broadcast term uses the product of the two relay marginals.
pub fn actual_energy(first: &QueueMetrics, second: &QueueMetrics, solution: &StaticSolution) -> Result<ActualEnergy> {
    if first.pair != QueuePair::First || second.pair != QueuePair::Second {
        return Err(Error::InvalidInput("expected metrics for the first and second pair".into()));
    }
    let alloc = &solution.allocation;
    let term = |mode: Mode, marginal: &[f64]| -> f64 {
        let i = mode.index();
        let cap = solution.service_packets(mode);
        let g = solution.gains.gain(mode);
        marginal
            .iter()
            .enumerate()
            .map(|(q, p)| p * slot_energy(q, cap, alloc.powers[i], g))
            .sum()
    };
    let mut per_mode = [0.0; NUM_MODES];
    per_mode[Mode::Uplink1.index()] = term(Mode::Uplink1, &first.source_marginal);
    per_mode[Mode::Uplink2.index()] = term(Mode::Uplink2, &second.source_marginal);
    per_mode[Mode::Forward1.index()] = term(Mode::Forward1, &second.relay_marginal);
    per_mode[Mode::Forward2.index()] = term(Mode::Forward2, &first.relay_marginal);
    {
        let mode = Mode::Broadcast;
        let cap = solution.service_packets(mode);
        let g = solution.gains.gain(mode);
        let full = alloc.powers[mode.index()];
        let mut e = 0.0;
        for (j, pj) in first.relay_marginal.iter().enumerate() {
            for (l, pl) in second.relay_marginal.iter().enumerate() {
                e += pj * pl * slot_energy(j.max(l), cap, full, g);
            }
        }
        per_mode[mode.index()] = e;
    }
    let total = per_mode.iter().zip(&alloc.fractions).map(|(e, f)| e * f).sum();
    let design = alloc.fractions.iter().zip(&alloc.powers).map(|(f, p)| f * p).sum();
    Ok(ActualEnergy { per_mode, total, design })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueAnalysis {
    pub first: QueueMetrics,
    pub second: QueueMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy: Option<ActualEnergy>,
}

impl QueueAnalysis {
    pub fn warnings(&self) -> Vec<String> {
        [&self.first, &self.second]
            .into_iter()
            .filter_map(|m| m.warning.clone())
            .collect()
    }
}

/// Both queue pairs under a static allocation solved at design rates
/// `lambda (1 + eps)`; `rates` carries the actual arrival rates.
pub fn analyze_static(solution: &StaticSolution, rates: &ArrivalRates, opts: &AnalysisOptions) -> Result<QueueAnalysis> {
    let run = |pair| analyze_with(|t| build_static_chain(solution, rates, pair, t, opts.slot_duration), opts);
    let first = run(QueuePair::First)?;
    let second = run(QueuePair::Second)?;
    let energy = actual_energy(&first, &second, solution)?;
    Ok(QueueAnalysis {
        first,
        second,
        energy: Some(energy),
    })
}

/// Both queue pairs under the water-filling policy.
pub fn analyze_fading(solution: &ErgodicSolution, rates: &ArrivalRates, opts: &AnalysisOptions) -> Result<QueueAnalysis> {
    let run = |pair| analyze_with(|t| build_fading_chain(solution, rates, pair, t, opts.slot_duration), opts);
    Ok(QueueAnalysis {
        first: run(QueuePair::First)?,
        second: run(QueuePair::Second)?,
        energy: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::chain::{build_chain_from_levels, point_levels};
    use crate::model::ChannelGains;
    use crate::static_opt::solve_static;

    fn unit_case(eps: f64) -> (StaticSolution, ArrivalRates) {
        let rates = ArrivalRates::new(0.5, 1.0, eps).unwrap();
        let sol = solve_static(&ChannelGains::uniform(1.0).unwrap(), &rates).unwrap();
        (sol, rates)
    }

    #[test]
    fn means_by_definition() {
        let (sol, rates) = unit_case(0.5);
        let chain = build_static_chain(&sol, &rates, QueuePair::First, Truncation::square(3), 1.0).unwrap();
        let mut pi = vec![0.0; chain.num_states()];
        pi[chain.index(1, 0)] = 0.5;
        pi[chain.index(0, 2)] = 0.5;
        assert_eq!(mean_queue_lengths(&pi, &chain), (0.5, 1.0));
        let mut empty = vec![0.0; chain.num_states()];
        empty[0] = 1.0;
        assert_eq!(mean_queue_lengths(&empty, &chain), (0.0, 0.0));
    }

    #[test]
    fn no_arrivals_concentrates_at_origin() {
        let (sol, _) = unit_case(0.5);
        let rates = ArrivalRates::new(0.0, 1.0, 0.5).unwrap();
        let chain = build_static_chain(&sol, &rates, QueuePair::First, Truncation::square(10), 1.0).unwrap();
        let m = metrics(&chain).unwrap();
        assert!((m.pi[0] - 1.0).abs() < 1e-12);
        assert!(m.mean_source.abs() < 1e-12 && m.mean_relay.abs() < 1e-12);
    }

    #[test]
    fn stable_case_is_well_contained() {
        let (sol, rates) = unit_case(0.5);
        let a = analyze_static(&sol, &rates, &AnalysisOptions::default()).unwrap();
        for m in [&a.first, &a.second] {
            assert!(m.boundary_mass < BOUNDARY_TARGET, "{}", m.boundary_mass);
            assert!(m.residual < 1e-8);
            assert!((m.pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(m.pi.iter().all(|p| *p >= 0.0));
        }
        let e = a.energy.unwrap();
        assert!(e.total <= e.design + 1e-12);
        assert!(e.total > 0.0);
    }

    #[test]
    fn saturated_queues_spend_the_design_energy() {
        let (sol, _) = unit_case(0.0);
        let full = |pair, n: usize| {
            let mut v = vec![0.0; n];
            v[n - 1] = 1.0;
            QueueMetrics {
                pair,
                truncation: Truncation::square(n - 1),
                mean_source: 0.0,
                mean_relay: 0.0,
                boundary_mass: 1.0,
                residual: 0.0,
                method: SolveMethod::Banded,
                source_marginal: v.clone(),
                relay_marginal: v,
                warning: None,
                pi: vec![],
            }
        };
        let e = actual_energy(&full(QueuePair::First, 40), &full(QueuePair::Second, 40), &sol).unwrap();
        assert!((e.total - sol.energy()).abs() < 1e-9 * sol.energy());
        let empty = |pair| {
            let mut m = full(pair, 40);
            m.source_marginal = point_levels(0);
            m.relay_marginal = point_levels(0);
            m
        };
        let e = actual_energy(&empty(QueuePair::First), &empty(QueuePair::Second), &sol).unwrap();
        assert_eq!(e.total, 0.0);
    }

    #[test]
    fn relay_without_service_fills_the_box() {
        let f = [0.3, 0.1, 0.2, 0.2, 0.2];
        let build = |n: usize| {
            build_chain_from_levels(
                &f,
                0.5,
                QueuePair::First,
                vec![0.2, 0.5, 0.3],
                point_levels(0),
                point_levels(0),
                Truncation::square(n),
            )
            .unwrap()
        };
        let small = metrics(&build(8)).unwrap();
        let large = metrics(&build(16)).unwrap();
        assert!(small.warning.is_some());
        assert!(large.mean_relay > small.mean_relay + 7.0);
        // with no service anywhere the chain splits into closed classes
        let stuck = build_chain_from_levels(
            &f,
            0.5,
            QueuePair::First,
            point_levels(0),
            point_levels(0),
            point_levels(0),
            Truncation::square(6),
        )
        .unwrap();
        assert!(matches!(metrics(&stuck), Err(Error::Reducible { .. })));
    }
}
