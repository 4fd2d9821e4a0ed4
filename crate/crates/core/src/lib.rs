//! Energy-minimal resource allocation for a three-node two-way relay network
//! with digital network coding, plus exact queue analysis and slot-level
//! simulation of the randomized scheduling protocol that realizes it.

// `!(x >= 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ergodic_opt;
pub mod error;
pub mod experiment;
pub mod markov;
pub mod model;
pub mod quad;
pub mod scenario;
pub mod sim;
pub mod static_opt;

pub use error::{Error, Result};
pub use model::{
    power_for_rate, virtual_rates, Allocation, ArrivalRates, ChannelDistribution, ChannelGains, FadingChannel,
    LinkGains, Mode, Multipliers, NUM_MODES,
};
pub use scenario::{ChannelSpec, Policy, Scenario, Scheme, Solved};
