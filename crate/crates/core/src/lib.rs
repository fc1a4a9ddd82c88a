//! Feature-set aggregation toolkit.
//!
//! Aggregates variable-size sets of feature vectors into one representation
//! per set. Besides plain and attention-weighted sums it provides
//! vocabulary-based burst suppression on disentangled variance features
//! ([`vbs`], [`disentangle`]) and the gram-matrix baselines GMP and DA
//! ([`baselines`]). [`synth`] generates bursty synthetic data, [`metrics`]
//! scores verification and identification protocols, and [`io`] holds the
//! on-disk formats.
//!
//! Batch drivers take an [`Execution`]; with the default `parallel` feature
//! they fan out over rayon, otherwise they run sequentially.

pub mod aggregate;
pub mod baselines;
pub mod bench;
pub mod disentangle;
pub mod error;
pub mod exec;
pub mod io;
pub mod metrics;
pub mod set;
pub mod synth;
pub mod vbs;

pub use error::{Error, Result};
pub use exec::Execution;
pub use set::{
    cosine_similarity, cross_similarity_decomposition, weighted_sum, FeatureSet, MethodTag, SetRepresentation,
    WeightVector,
};
