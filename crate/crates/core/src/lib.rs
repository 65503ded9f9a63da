//! Adaptive radar detection in the presence of an unknown number of
//! coherent (fully correlated) signals.
//!
//! The detectors compare, for each hypothesized number `i` of coherent
//! signals, the log generalized likelihood ratio `Λ̂_i` against a model order
//! selection penalty `c · h(i)`, and declare a target when the best penalized
//! value exceeds a threshold. The order achieving the maximum is the
//! classification of the environment.
//!
//! Modules:
//! - [`signal`]: steering vectors, interference covariance, data synthesis.
//! - [`linalg`]: sample covariance, whitening, Hermitian eigenvalues.
//! - [`stats`]: `Λ̂_0`, `Λ̂_i`, penalties, decisions, GAMF/GASD.
//! - [`search`]: grid search over the coherent AoAs (exhaustive or cyclic).
//! - [`montecarlo`]: threshold calibration and performance estimation.
//! - [`config`]: line-oriented scenario files.

pub mod config;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod search;
pub mod signal;
pub mod stats;

#[cfg(test)]
mod testutil;

pub use error::{ConfigIssue, Error, Result};
pub use linalg::{WhitenedCache, Whitening};
pub use montecarlo::{Detector, Experiment};
pub use search::{SearchConfig, SearchMode, SearchTrace};
pub use signal::{AngularGrid, DataBatch, Hypothesis, ScenarioConfig};
pub use stats::{Decision, HypothesisResult, PenaltyRule};
