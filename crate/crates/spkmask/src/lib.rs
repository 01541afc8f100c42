//! Multi-talker overlapped speech recognition and diarization lab.
//!
//! The pipeline: simulate overlapped speech mixtures with per-speaker
//! activity-mask targets, serialize transcripts under speaker / timestamp
//! label schemes, train a small encoder-decoder transformer with an
//! auxiliary speaker-mask branch, decode greedily, and score WER / DER /
//! SCA against the simulated references.
//!
//! Numeric code is generic over [`Scalar`] (f32 or f64); concrete aliases
//! for the common instantiations live at the crate root.

pub mod decode;
pub mod error;
pub mod graph;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod signal;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Sample rate used throughout; mixtures and corpora are all 16 kHz.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Mask / encoder frame duration in seconds (20 ms grid).
pub const MASK_FRAME_S: f64 = 0.02;

pub type AudioClip32 = signal::AudioClip<f32>;
pub type AudioClip64 = signal::AudioClip<f64>;
pub type FeatureMatrix32 = signal::FeatureMatrix<f32>;
pub type FeatureMatrix64 = signal::FeatureMatrix<f64>;
pub type MaskVector32 = signal::MaskVector<f32>;
pub type MaskVector64 = signal::MaskVector<f64>;
pub type Tensor32 = graph::Tensor<f32>;
pub type Tensor64 = graph::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
