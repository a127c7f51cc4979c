//! Statistical primitives over rating samples.
//!
//! Distribution, divergence, descriptive and rank-correlation code is generic
//! over [`Scalar`](crate::Scalar); p-values are always computed in `f64`.

mod descriptive;
mod distribution;
mod hypothesis;
mod rank;
pub mod special;

use thiserror::Error;

pub use descriptive::{mean, mean_std};
pub use distribution::{kl_divergence, pmf_of, wasserstein_distance, Distribution};
pub use hypothesis::{
    exact_mwu_pvalue, fisher_r_to_z, mann_whitney_u, TestMethod, TestResult, EXACT_MWU_LIMIT,
};
pub use rank::{average_ranks, pearson, spearman};
pub use special::{normal_cdf, student_t_cdf};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("pseudocount must be finite and nonnegative")]
    InvalidPseudocount,
    #[error("degenerate: zero rank variance")]
    Degenerate,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("correlation must satisfy |r| < 1, got {0}")]
    InvalidCorrelation(f64),
    #[error("sample size must exceed 3, got {0}")]
    InvalidSampleSize(usize),
}
