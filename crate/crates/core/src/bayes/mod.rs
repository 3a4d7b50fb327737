//! Exact Bayesian agents over a finite abstraction space, the grid
//! transition kernels they induce and their stationary distributions.

mod agent;
mod distribution;
mod inference;
mod kernel;
mod model;

use thiserror::Error;

use crate::grid::GridError;

pub use agent::{
    sample_chain_histogram, simulated_agent_step, AgentOutput, AgentTask, Inference,
    SimulatedBackend,
};
pub use distribution::{tv_distance, DistributionOverGrids};
pub use inference::{
    posterior_from_description, posterior_from_stimulus, prior_predictive, stimulus_likelihood,
    PriorKind,
};
pub use kernel::{
    multimodal_transition, stationary_distribution, unimodal_transition, DenseKernel,
    FactoredKernel, StationaryOptions, TransitionKernel,
};
pub use model::{coarse_language_model, AbstractionModel, ModelSpec, RandomModelSpec};

/// Largest tile count for which grids are enumerated exactly (`2^12` states).
pub const EXACT_MAX_TILES: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("model has no abstractions")]
    NoAbstractions,
    #[error("grid size {found} does not match model size {expected}")]
    TemplateSize { expected: usize, found: usize },
    #[error("flip rate {0} is outside (0, 0.5)")]
    FlipRate(f64),
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{which} has a non-positive entry at index {index}")]
    NonPositivePrior { which: &'static str, index: usize },
    #[error("{what} sums to {sum}, not 1")]
    NotNormalized { what: &'static str, sum: f64 },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("description likelihood row {row} has a negative or non-finite entry")]
    NegativeProbability { row: usize },
    #[error("description likelihood row {row} sums to {sum}, not 1")]
    RowNotNormalized { row: usize, sum: f64 },
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("description {0} has zero probability under the model")]
    ZeroEvidence(usize),
    #[error("{tiles} tiles is too many for exact enumeration (max {max})", max = EXACT_MAX_TILES)]
    StateSpaceTooLarge { tiles: usize },
    #[error("stationary iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("distributions are over different grid sizes")]
    SupportMismatch,
    #[error("no samples")]
    NoSamples,
    #[error("description {0:?} is not in the vocabulary")]
    UnknownDescription(String),
    #[error("model parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}
