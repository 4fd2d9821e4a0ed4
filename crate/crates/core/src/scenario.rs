//! Scenario files and solved-allocation documents.
//!
//! A scenario names a channel, the arrival rates with their back-off, and
//! the scheme to optimize. Solving it yields a [`Solved`] document that the
//! queue analysis and the simulator consume.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ergodic_opt::{solve_ergodic, solve_ergodic_conventional, ErgodicSolution};
use crate::error::{Error, Result};
use crate::model::{ArrivalRates, ChannelGains, FadingChannel, LinkGains, NUM_MODES};
use crate::static_opt::{solve_conventional, solve_static, StaticSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// Fixed link gains.
    Static(LinkGains),
    /// Rayleigh fading with the given mean link gains.
    Rayleigh(LinkGains),
    /// Arbitrary per-link gain laws.
    Fading(FadingChannel),
}

impl ChannelSpec {
    pub fn static_gains(&self) -> Result<ChannelGains> {
        match self {
            ChannelSpec::Static(g) => ChannelGains::try_from(*g),
            _ => Err(Error::InvalidInput("a static solve needs a channel of kind \"static\"".into())),
        }
    }

    /// Fading law of the links. Static gains are read as Rayleigh means.
    pub fn fading(&self) -> Result<FadingChannel> {
        let ch = match self {
            ChannelSpec::Static(g) | ChannelSpec::Rayleigh(g) => FadingChannel::rayleigh(g.g1r, g.g2r, g.gr1, g.gr2)?,
            ChannelSpec::Fading(f) => f.clone(),
        };
        ch.validate()?;
        Ok(ch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Network-coded broadcast allowed.
    #[default]
    Dnc,
    /// Broadcast mode disabled.
    Conventional,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub channel: ChannelSpec,
    pub rates: ArrivalRates,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub slot_duration: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("bad scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        if !(self.slot_duration > 0.0 && self.slot_duration.is_finite()) {
            return Err(Error::InvalidInput("slot_duration must be positive".into()));
        }
        match &self.channel {
            ChannelSpec::Static(g) | ChannelSpec::Rayleigh(g) => ChannelGains::try_from(*g).map(|_| ()),
            ChannelSpec::Fading(f) => f.validate(),
        }
    }

    pub fn solve_static(&self) -> Result<Solved> {
        let gains = self.channel.static_gains()?;
        let solution = match self.scheme {
            Scheme::Dnc => solve_static(&gains, &self.rates)?,
            Scheme::Conventional => solve_conventional(&gains, &self.rates)?,
        };
        Ok(Solved {
            scheme: self.scheme,
            rates: self.rates,
            slot_duration: self.slot_duration,
            policy: Policy::Static { solution },
        })
    }

    pub fn solve_ergodic(&self) -> Result<Solved> {
        let channel = self.channel.fading()?;
        let dists = channel.mode_distributions();
        let solution = match self.scheme {
            Scheme::Dnc => solve_ergodic(&dists, &self.rates)?,
            Scheme::Conventional => solve_ergodic_conventional(&dists, &self.rates)?,
        };
        Ok(Solved {
            scheme: self.scheme,
            rates: self.rates,
            slot_duration: self.slot_duration,
            policy: Policy::Fading { solution, channel },
        })
    }

    /// Static solve for a fixed channel, ergodic otherwise.
    pub fn solve(&self) -> Result<Solved> {
        match self.channel {
            ChannelSpec::Static(_) => self.solve_static(),
            _ => self.solve_ergodic(),
        }
    }
}

/// What the scheduler runs: static rates and powers, or the water-filling
/// policy together with the fading law it was solved for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Policy {
    Static {
        solution: StaticSolution,
    },
    Fading {
        solution: ErgodicSolution,
        channel: FadingChannel,
    },
}

impl Policy {
    pub fn fractions(&self) -> &[f64; NUM_MODES] {
        match self {
            Policy::Static { solution } => &solution.allocation.fractions,
            Policy::Fading { solution, .. } => &solution.allocation.fractions,
        }
    }

    /// `sum f_i P_i`, or `sum f_i Pbar_i` for the fading policy.
    pub fn design_energy(&self) -> f64 {
        match self {
            Policy::Static { solution } => solution.energy(),
            Policy::Fading { solution, .. } => solution.energy(),
        }
    }
}

/// A solved allocation plus the rates it was sized for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solved {
    pub scheme: Scheme,
    /// Actual arrival rates and the back-off used in the design.
    pub rates: ArrivalRates,
    #[serde(default = "one")]
    pub slot_duration: f64,
    pub policy: Policy,
}

impl Solved {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("bad allocation: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The same channel and scheme re-solved at back-off `eps`.
    pub fn with_epsilon(&self, eps: f64) -> Result<Solved> {
        let rates = ArrivalRates::new(self.rates.lambda1, self.rates.lambda2, eps)?;
        let scenario = Scenario {
            name: None,
            channel: match &self.policy {
                Policy::Static { solution } => ChannelSpec::Static(solution.gains.into()),
                Policy::Fading { channel, .. } => ChannelSpec::Fading(channel.clone()),
            },
            rates,
            scheme: self.scheme,
            slot_duration: self.slot_duration,
        };
        scenario.solve()
    }
}
