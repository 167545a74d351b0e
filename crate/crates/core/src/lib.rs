//! Unsupervised music-structure segmentation.
//!
//! Audio is decoded and analysed with a constant-Q transform at beat
//! subdivisions. Beat-centred log-CQT patches feed a small CNN that is
//! trained with a triplet loss. Positives and negatives are chosen only by
//! their distance in beats from the anchor. Boundaries are then found by
//! correlating a checkerboard kernel along the diagonal of the embedding
//! self-similarity matrix and peak-picking the resulting novelty curve.
//!
//! The numeric core (network, loss, self-similarity, novelty) is generic
//! over [`Scalar`]; the aliases below fix the scalar for everyday use.

pub mod audio;
pub mod config;
pub mod dsp;
pub mod embedding;
pub mod evaluation;
pub mod features;
pub mod sampling;
pub mod scalar;
pub mod segmentation;
pub mod synth;

pub use scalar::Scalar;

/// Single-precision embedding network, as trained and checkpointed.
pub type EmbeddingModel = embedding::Model<f32>;
/// Double-precision network, used for gradient verification.
pub type EmbeddingModel64 = embedding::Model<f64>;
pub type EmbeddingSequence = embedding::EmbeddingSequence<f32>;
pub type SelfSimilarityMatrix = segmentation::SelfSimilarityMatrix<f32>;
pub type CheckerboardKernel = segmentation::CheckerboardKernel<f32>;
pub type NoveltyCurve = segmentation::NoveltyCurve<f32>;

pub use audio::AudioBuffer;
pub use dsp::{BeatGrid, CqtMatrix, CqtParams};
pub use features::{FeatureStore, Patch, PatchConfig};
pub use sampling::{SamplingParams, SegmentTimeline, TripletIndices};
