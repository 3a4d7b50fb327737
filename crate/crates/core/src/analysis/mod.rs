//! Statistics over completed chains: velocity, complexity comparisons,
//! ANOVA and cross-validated decoding from description embeddings.

mod embed;
mod metrics;
mod report;
mod ridge;
mod stats;

use thiserror::Error;

use crate::complexity::ComplexityError;

pub use embed::{
    design_matrix, embed_descriptions, EmbedError, EmbeddingProvider, EmbeddingVector,
    OfflineFeaturizer, DEFAULT_DIMENSION,
};
pub use metrics::{
    board_frequencies, chain_velocity, mean_board_complexity, ChainMean, VelocitySeries,
};
pub use report::{
    analyze, description_pairs, AnalysisReport, AnovaRow, ChainRow, Comparison, DecodingRow,
    DescriptionPair, ReportOptions, METRICS,
};
pub use ridge::{
    check_leakage, lambda_grid, r_squared, ridge_decode, ridge_solve, DecodingResult, FoldGrouping,
    FoldPlan, RidgeModel, RidgeOptions, Standardizer, MIN_SAMPLES,
};
pub use stats::{pooled_t_test, two_way_anova, AnovaResult, Effect, TTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("data has zero variance")]
    ZeroVariance,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("each factor needs at least two levels")]
    TooFewLevels,
    #[error("design is unbalanced")]
    Unbalanced,
    #[error("chain {chain_id} has {found} boards")]
    TooFewBoards { chain_id: String, found: usize },
    #[error("chain {chain_id}: {source}")]
    Metric {
        chain_id: String,
        source: ComplexityError,
    },
    #[error("target is constant")]
    ConstantTarget,
    #[error("need at least {needed} groups for the folds, found {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("fold {fold} shares a group between train and test")]
    Leakage { fold: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}
