//! Simulation, pricing and book-keeping for hedging the CVA of an FX forward
//! with CDS contracts and USD cash.
//!
//! The crate is organised bottom-up: [`market_sim`] generates risk-factor
//! paths, [`pricing`] maps them to book values, [`book_env`] runs the hedging
//! book as an episodic decision process and [`benchmarks`] provides the
//! analytic reference strategies.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod book_env;
pub mod config;
pub mod error;
pub mod market_sim;
pub mod presets;
pub mod pricing;

pub use config::{GridSpec, IntensityMultiplier, MarketParams, Scenario};
pub use error::{CoreError, Result};
