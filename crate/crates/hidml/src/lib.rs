//! Learning a low-rank Mahalanobis metric over very high-dimensional
//! feature vectors, and classifying with a smoothed k-nearest-neighbor rule.
//!
//! The pipeline runs in stages. Each stage mines triplet constraints that the
//! current metric gets wrong, solves a small proximal subproblem in a randomly
//! projected dual space, folds the resulting dual weights into a sparse
//! combination matrix, and re-extracts a rank-`r` factor `L` with
//! `M = L L^T ⪰ 0` by a randomized eigensolver that never materializes the
//! `d x d` metric. Training cost stays linear in the feature dimension.
//!
//! Module map:
//! - [`data`]: dataset loading, synthesis, and stratified splitting
//! - [`loss`]: the smoothed hinge loss, its derivative and convex conjugate
//! - [`sketch`]: double Gaussian random projection of triplet constraints
//! - [`sampler`]: active-triplet mining under the current metric
//! - [`solver`]: SGD on the reduced subproblem and dual extraction
//! - [`recover`]: sparse dual accumulation and randomized low-rank PSD factorization
//! - [`trainer`]: the multi-stage orchestration loop
//! - [`classifier`]: smoothed k-NN with per-class reference centers

pub mod classifier;
pub mod data;
mod error;
pub mod linalg;
pub mod loss;
pub mod recover;
pub mod sampler;
pub mod sketch;
pub mod solver;
pub mod trainer;

pub use error::{Error, Result};
