//! Exact queue analysis of the random scheduling protocol.

pub mod analysis;
pub mod chain;
pub mod sparse;
pub mod stationary;

pub use analysis::{
    actual_energy, analyze_fading, analyze_static, analyze_with, mean_queue_lengths, metrics, ActualEnergy,
    AnalysisOptions, QueueAnalysis, QueueMetrics,
};
pub use chain::{
    arrival_pmf, build_chain_from_levels, build_fading_chain, build_static_chain, point_levels, QueueChain,
    QueuePair, ServiceLaw, Truncation,
};
pub use sparse::SparseMatrix;
pub use stationary::{stationary_distribution, SolveMethod, Stationary};
