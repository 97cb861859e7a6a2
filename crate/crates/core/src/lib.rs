//! LDA-based representation quality scores for joint-embedding models.
//!
//! The crate estimates within- and between-class scatter over surrogate
//! classes (one clean input, many transformed views), whitens the
//! between-class scatter, and reports the smooth rank of the result
//! ([`metrics::lidar_score`]). Covariance-rank baselines
//! ([`metrics::rankme_score`], [`metrics::rankme_aug_score`]) are provided
//! for comparison, along with rank-correlation tooling for label-free model
//! selection and a seeded synthetic harness.

pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rankstats;
pub mod scatter;
pub mod spectra;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::{DegeneratePolicy, MetricConfig, MetricKind, MetricScore};
pub use scatter::{EmbeddingBatch, ScatterPair};
pub use spectra::{SmoothRank, SquareMatrix, Spectrum};
