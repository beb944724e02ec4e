//! Trust-region policy search on the mean-volatility objective of
//! stochastic-horizon episodes.
//!
//! The pipeline per iteration is: roll out a batch ([`train::collect`]),
//! compute returns, reward-to-go and squared-residual-to-go
//! ([`stats::estimate_stats`]), form score-function gradients of `Ĵ` and
//! `ν̂²` with cross-fitted baselines ([`stats::compute_gradients`]), and take
//! a KL-limited natural-gradient step ([`update::trust_region_update`]).

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod error;
pub mod family;
pub mod policy;
pub mod stats;
pub mod tabular;
pub mod train;
pub mod update;

pub use error::{Result, TrvoError};
pub use family::{Categorical, DiagGaussian, Family};
pub use policy::{policy_sample, Actor, GaussianMlp, Normalizer, Policy, PolicyParams, TabularSoftmax};
pub use stats::{
    compute_gradients, estimate_stats, mean_gradient, volatility_gradient, Baseline, BatchStats, GradientCoefficients,
};
pub use tabular::TabularMdp;
pub use train::{evaluate, train, Checkpoint, CurveRow, EvalConfig, TrainOutcome, TrvoConfig};
pub use update::{trust_region_update, TrustRegion, UpdateReport};
