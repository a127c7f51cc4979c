//! Three-stage belief-dynamics simulation and cohort comparison.
//!
//! Agents rate a statement on a 0-4 Likert scale, update after observing
//! peers, then choose whom to follow. Cohorts of such traces are compared
//! with divergences, rank correlations and nonparametric tests.

pub mod agents;
pub mod beliefmetrics;
pub mod engine;
pub mod llmagent;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod trace;

pub use scalar::Scalar;

pub type Distribution64 = stats::Distribution<f64>;
pub type Distribution32 = stats::Distribution<f32>;
