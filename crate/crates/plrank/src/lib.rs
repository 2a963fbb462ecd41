//! Listwise learning-to-rank with Plackett-Luce ranking models.
//!
//! Scores from a linear or small MLP scorer induce a Plackett-Luce
//! distribution over rankings. Training maximizes the expected value of a
//! top-K metric (DCG or precision) by stochastic gradient ascent, with the
//! gradient estimated from Gumbel-sampled rankings. Two estimators are
//! provided: `plrank2`, a direct O(D·K)-per-sample reference, and `plrank3`,
//! an algebraically identical O(D + K)-per-sample reformulation. Exact
//! enumeration oracles for small instances back both with tests.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! binaries and all pinned tolerances use [`Real`].

pub mod cli;
pub mod data;
pub mod gradients;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod scalar;
pub mod types;

pub use scalar::Scalar;

/// Scalar the command-line tools and acceptance tolerances are pinned to.
pub type Real = f64;

/// Query with items, features, and relevances at default precision.
pub type Query = types::QueryInstance<Real>;
/// Per-item score vector at default precision.
pub type Scores = types::ScoreVector<Real>;
/// Rank-weight vector at default precision.
pub type Weights = types::MetricWeights<Real>;
/// Per-item gradient vector at default precision.
pub type Gradient = types::GradientVector<Real>;
/// Loaded dataset split at default precision.
pub type Split = data::DatasetSplit<Real>;
