use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("channel gain must be positive, got {0}")]
    NonPositiveGain(f64),

    #[error("multiplier {0} admits no positive-rate root")]
    NoActiveRoot(f64),

    #[error("arrival pair is infeasible: sum of time fractions stays above 1 up to multiplier cap {cap:e}")]
    Infeasible { cap: f64 },

    #[error("small-rate approximation is not valid here: {0}")]
    ApproximationInvalid(String),

    #[error("quadrature did not converge on [{lo}, {hi}]: estimate {estimate}, error {error_estimate:e} after {evaluations} evaluations")]
    Quadrature {
        lo: f64,
        hi: f64,
        estimate: f64,
        error_estimate: f64,
        evaluations: usize,
    },

    #[error("markov chain is reducible: {closed_classes} closed classes")]
    Reducible { closed_classes: usize },

    #[error("stationary solve failed: {0}")]
    Stationary(String),

    #[error("simulation became unstable at slot {slot}: queue {queue} reached {length} packets")]
    Unstable {
        slot: u64,
        queue: &'static str,
        length: u64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NonPositiveGain(_) => "non_positive_gain",
            Error::NoActiveRoot(_) => "no_active_root",
            Error::Infeasible { .. } => "infeasible",
            Error::ApproximationInvalid(_) => "approximation_invalid",
            Error::Quadrature { .. } => "quadrature",
            Error::Reducible { .. } => "reducible",
            Error::Stationary(_) => "stationary",
            Error::Unstable { .. } => "unstable",
        }
    }
}
