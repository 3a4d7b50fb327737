//! Serial-reproduction chains over binary grid stimuli.
//!
//! The crate covers the stimulus space ([`grid`]), the board complexity
//! measures ([`complexity`]), exact and sampled Bayesian agents
//! ([`bayes`]), the chain engine ([`chain`]) and the statistical analyses
//! of completed chains ([`analysis`]).

pub mod analysis;
pub mod bayes;
pub mod chain;
pub mod complexity;
pub mod exec;
pub mod grid;
pub mod seed;

pub use exec::Execution;
pub use grid::{Grid, GridError};
