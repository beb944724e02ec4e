//! Experiment orchestration for the CVA hedging library: configuration
//! files, out-of-sample frontiers, paired significance tests and the
//! `cvahedge` command line.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod frontier;
pub mod significance;

pub use config::{EvaluationSection, ExperimentConfig, TrainingSection};
pub use error::{HarnessError, Result};
pub use frontier::{frontier, FrontierEntry, FrontierPoint, LoadedPolicy, PolicySource};
pub use significance::{paired_t_test, stars, PairedTest};
