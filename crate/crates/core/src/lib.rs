//! Numerical laboratory for preference learning from pairwise comparisons.
//!
//! The ground object is a joint distribution over triplets `(x, y+, y-)`
//! meaning "response `y+` beat response `y-` in context `x`". Everything
//! else is derived from it:
//!
//! - [`tabular`] holds exact probability tables over a finite item universe,
//!   the comparison distribution over unordered pairs, and the conditional
//!   preference distribution (CPRD) they induce.
//! - [`represent`] decides whether a CPRD admits a Bradley-Terry model and
//!   constructs conditionally independent realizations with their implied
//!   score functions.
//! - [`scorers`] provides the three hypothesis classes (tabular table,
//!   linear-in-features, two-layer cosine MLP) with exact parameter
//!   gradients.
//! - [`training`] fits BT scores by Adam on the logistic pairwise loss and
//!   decomposes the population objective into a constant plus a weighted
//!   Bernoulli KL.
//! - [`connectivity`] computes the connectivity degree of a distribution:
//!   exactly via graph-Laplacian / whitened-covariance spectra where closed
//!   forms exist, variationally elsewhere, and optimizes the negative
//!   distribution to maximize it.
//! - [`design`] builds BT-consistent triplet distributions for a target
//!   score (uniform and exponentially tilted negatives, rank normalization,
//!   margin scaling) and samples datasets from them.
//! - [`evaluation`] measures pairwise-ordering accuracy, margin statistics,
//!   estimation and misspecification error, all by exact enumeration.

pub mod connectivity;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod items;
pub mod optim;
pub mod represent;
pub mod rng;
pub mod scorers;
pub mod tabular;
pub mod training;

pub use error::{Error, Result};
pub use items::{ItemSet, Triplet, TripletDataset};
pub use represent::ConditionalPair;
pub use scorers::{ModelInputs, ModelSpec, ScoreModel, ScoreTable};
pub use tabular::{ComparisonDistribution, Cprd, TabularTripletDistribution};
