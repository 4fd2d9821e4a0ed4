//! Slotted Monte-Carlo simulation of the random scheduling protocol.
//!
//! Each slot the relay draws a mode with probability `f_i`, the scheduled
//! transmitter sends up to its per-slot packet capacity from a nonempty
//! buffer, and then the slot's Poisson arrivals join the source buffers.
//! Queue lengths are sampled at the start of every slot.
//!
//! Every random draw comes from its own ChaCha8 stream (one per purpose)
//! positioned at a fixed word offset per slot, so a run is reproducible
//! from the seed and no draw depends on how many draws preceded it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::arrival_pmf;
use crate::model::{ArrivalRates, ChannelGains, Mode, NUM_MODES};
pub use crate::scenario::Policy;
use crate::static_opt::packets_for_rate;

pub const DEFAULT_SLOTS: u64 = 1_000_000;
pub const DEFAULT_GUARD: u64 = 1_000_000;
pub const TRACE_EVERY: u64 = 1_000;

/// 32-bit words reserved per slot in every stream.
const WORDS_PER_SLOT: u128 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Mode = 1,
    Arrival1 = 2,
    Arrival2 = 3,
    Channel = 4,
}

/// Link gain used when the broadcast mode finds only one relay buffer
/// nonempty and falls back to one-way forwarding at the broadcast rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackGain {
    /// The downlink of the single receiver.
    #[default]
    Receiver,
    /// The broadcast gain `min(gr1, gr2)`.
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: Policy,
    /// Actual arrival rates; `epsilon` is ignored here.
    pub rates: ArrivalRates,
    pub slots: u64,
    pub seed: u64,
    /// Abort once any queue exceeds this many packets.
    pub guard: u64,
    pub slot_duration: f64,
    pub fallback: FallbackGain,
    /// Record a trace row every this many slots (0 disables).
    pub trace_every: u64,
}

impl SimConfig {
    pub fn new(policy: Policy, rates: ArrivalRates) -> Self {
        SimConfig {
            policy,
            rates,
            slots: DEFAULT_SLOTS,
            seed: 0,
            guard: DEFAULT_GUARD,
            slot_duration: 1.0,
            fallback: FallbackGain::default(),
            trace_every: 0,
        }
    }

    pub fn design_energy(&self) -> f64 {
        self.policy.design_energy()
    }
}

/// Queue lengths in the fixed order `Q1, Q2, Qr1, Qr2`.
pub type Queues = [u64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub queues: Queues,
    /// Energy per slot averaged over the slots so far.
    pub energy_per_slot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub slots: u64,
    pub seed: u64,
    pub mean_q1: f64,
    pub mean_q2: f64,
    pub mean_qr1: f64,
    pub mean_qr2: f64,
    /// Time-average queue lengths over the first and second half of the run.
    pub half_means: [[f64; 4]; 2],
    pub energy_per_slot: f64,
    pub design_energy: f64,
    pub mode_counts: [u64; NUM_MODES],
    /// Slots where the selected mode had nothing to send.
    pub idle_counts: [u64; NUM_MODES],
    pub max_queues: Queues,
    pub final_queues: Queues,
    /// Packets generated at S1 and S2.
    pub arrivals: [u64; 2],
    /// Packets of each flow delivered to the far source.
    pub delivered: [u64; 2],
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TraceRow>,
}

struct Streams {
    rngs: [ChaCha8Rng; 4],
}

impl Streams {
    fn new(seed: u64) -> Self {
        let make = |s: Stream| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s as u64);
            r
        };
        Streams {
            rngs: [
                make(Stream::Mode),
                make(Stream::Arrival1),
                make(Stream::Arrival2),
                make(Stream::Channel),
            ],
        }
    }

    fn at(&mut self, s: Stream, slot: u64) -> &mut ChaCha8Rng {
        let r = &mut self.rngs[s as usize - 1];
        r.set_word_pos(slot as u128 * WORDS_PER_SLOT);
        r
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut c: Vec<f64> = p
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = f64::INFINITY;
    }
    c
}

fn invert(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u)
}

/// Rate, capacity and full power of one mode in one slot.
#[derive(Debug, Clone, Copy)]
struct Link {
    rate: f64,
    cap: u64,
    gain: f64,
    full_power: f64,
}

impl Link {
    fn new(rate: f64, gain: f64, full_power: f64) -> Self {
        Link {
            rate,
            cap: packets_for_rate(rate) as u64,
            gain,
            full_power,
        }
    }

    /// Energy to empty `sent` packets from a backlog of `backlog`.
    fn energy(&self, backlog: u64, sent: u64) -> f64 {
        if backlog == 0 {
            0.0
        } else if backlog >= self.cap {
            self.full_power
        } else {
            ((sent as f64).exp2() - 1.0) / self.gain
        }
    }
}

fn links_for(policy: &Policy, gains: &ChannelGains) -> [Link; NUM_MODES] {
    std::array::from_fn(|i| {
        let mode = Mode::from_index(i).expect("mode index");
        let g = gains.gain(mode);
        match policy {
            Policy::Static { solution } => {
                let a = &solution.allocation;
                Link::new(a.rates[i], g, a.powers[i])
            }
            Policy::Fading { solution, .. } => Link::new(solution.rate_at(mode, g), g, solution.power_at(mode, g)),
        }
    })
}

/// One-way fallback of the broadcast mode towards a receiver on link gain `g`.
fn fallback_link(broadcast: &Link, g: f64) -> Link {
    Link {
        gain: g,
        full_power: (broadcast.rate * std::f64::consts::LN_2).exp_m1() / g,
        ..*broadcast
    }
}

pub fn run_eersp(config: &SimConfig) -> Result<SimReport> {
    if config.slots == 0 {
        return Err(Error::InvalidInput("slot count must be >= 1".into()));
    }
    if !(config.slot_duration > 0.0 && config.slot_duration.is_finite()) {
        return Err(Error::InvalidInput("slot duration must be positive".into()));
    }
    config.rates.validate()?;
    let f = config.policy.fractions();
    let sum: f64 = f.iter().sum();
    if f.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("mode probabilities sum to {sum}, expected 1")));
    }
    let f: Vec<f64> = f.iter().map(|v| v / sum).collect();
    let mode_cdf = cumulative(&f);
    let arr1 = cumulative(&arrival_pmf(config.rates.lambda1 * config.slot_duration)?);
    let arr2 = cumulative(&arrival_pmf(config.rates.lambda2 * config.slot_duration)?);

    let fixed_links = match &config.policy {
        Policy::Static { solution } => Some(links_for(&config.policy, &solution.gains)),
        Policy::Fading { channel, .. } => {
            channel.validate()?;
            None
        }
    };

    let mut streams = Streams::new(config.seed);
    let mut q: Queues = [0; 4];
    let mut sums = [0u128; 4];
    let mut half = [[0u128; 4]; 2];
    let half_point = config.slots / 2;
    let mut max_q: Queues = [0; 4];
    let mut energy = 0.0;
    let mut mode_counts = [0u64; NUM_MODES];
    let mut idle_counts = [0u64; NUM_MODES];
    let mut arrivals = [0u64; 2];
    let mut delivered = [0u64; 2];
    let mut trace = Vec::new();
    const NAMES: [&str; 4] = ["Q1", "Q2", "Qr1", "Qr2"];

    for slot in 0..config.slots {
        let h = usize::from(slot >= half_point);
        for k in 0..4 {
            sums[k] += q[k] as u128;
            half[h][k] += q[k] as u128;
            max_q[k] = max_q[k].max(q[k]);
        }

        let u: f64 = streams.at(Stream::Mode, slot).random();
        let mode_idx = invert(&mode_cdf, u).min(NUM_MODES - 1);
        let mode = Mode::from_index(mode_idx).expect("mode index");
        mode_counts[mode_idx] += 1;

        let (links, gains) = match (&fixed_links, &config.policy) {
            (Some(l), Policy::Static { solution }) => (*l, solution.gains),
            (_, Policy::Fading { channel, .. }) => {
                let rng = streams.at(Stream::Channel, slot);
                let u: [f64; 4] = std::array::from_fn(|_| rng.random());
                let g = channel.gains_from_uniforms(u)?;
                (links_for(&config.policy, &g), g)
            }
            _ => unreachable!("static policy always has fixed links"),
        };
        let link = links[mode_idx];

        let serve = |from: usize, link: &Link, q: &mut Queues| -> (u64, f64) {
            let backlog = q[from];
            let sent = backlog.min(link.cap);
            q[from] -= sent;
            (sent, link.energy(backlog, sent))
        };

        let idle = match mode {
            Mode::Uplink1 | Mode::Uplink2 => {
                let (src, relay) = if mode == Mode::Uplink1 { (0, 3) } else { (1, 2) };
                let idle = q[src] == 0;
                let (sent, e) = serve(src, &link, &mut q);
                q[relay] += sent;
                energy += e;
                idle
            }
            Mode::Forward1 | Mode::Forward2 => {
                let (relay, flow) = if mode == Mode::Forward1 { (2, 1) } else { (3, 0) };
                let idle = q[relay] == 0;
                let (sent, e) = serve(relay, &link, &mut q);
                delivered[flow] += sent;
                energy += e;
                idle
            }
            Mode::Broadcast => {
                let (b1, b2) = (q[2], q[3]);
                if b1 > 0 && b2 > 0 {
                    let s1 = b1.min(link.cap);
                    let s2 = b2.min(link.cap);
                    q[2] -= s1;
                    q[3] -= s2;
                    delivered[1] += s1;
                    delivered[0] += s2;
                    energy += link.energy(b1.max(b2), s1.max(s2));
                } else if b1 > 0 || b2 > 0 {
                    // Qr1 is bound for S1 over gr1, Qr2 for S2 over gr2
                    let (relay, flow, g) = if b1 > 0 {
                        (2, 1, gains.gain(Mode::Forward1))
                    } else {
                        (3, 0, gains.gain(Mode::Forward2))
                    };
                    let one_way = match config.fallback {
                        FallbackGain::Receiver => fallback_link(&link, g),
                        FallbackGain::Broadcast => link,
                    };
                    let (sent, e) = serve(relay, &one_way, &mut q);
                    delivered[flow] += sent;
                    energy += e;
                }
                b1 == 0 && b2 == 0
            }
        };
        if idle {
            idle_counts[mode_idx] += 1;
        }

        let u1: f64 = streams.at(Stream::Arrival1, slot).random();
        let u2: f64 = streams.at(Stream::Arrival2, slot).random();
        let a1 = invert(&arr1, u1) as u64;
        let a2 = invert(&arr2, u2) as u64;
        q[0] += a1;
        q[1] += a2;
        arrivals[0] += a1;
        arrivals[1] += a2;

        if let Some(k) = (0..4).find(|&k| q[k] > config.guard) {
            return Err(Error::Unstable {
                slot,
                queue: NAMES[k],
                length: q[k],
            });
        }
        if config.trace_every > 0 && (slot + 1) % config.trace_every == 0 {
            trace.push(TraceRow {
                slot: slot + 1,
                queues: q,
                energy_per_slot: energy / (slot + 1) as f64,
            });
        }
    }

    let n = config.slots as f64;
    let halves = [half_point.max(1) as f64, (config.slots - half_point) as f64];
    Ok(SimReport {
        slots: config.slots,
        seed: config.seed,
        mean_q1: sums[0] as f64 / n,
        mean_q2: sums[1] as f64 / n,
        mean_qr1: sums[2] as f64 / n,
        mean_qr2: sums[3] as f64 / n,
        half_means: std::array::from_fn(|h| std::array::from_fn(|k| half[h][k] as f64 / halves[h])),
        energy_per_slot: energy / n,
        design_energy: config.design_energy(),
        mode_counts,
        idle_counts,
        max_queues: max_q,
        final_queues: q,
        arrivals,
        delivered,
        trace,
    })
}
