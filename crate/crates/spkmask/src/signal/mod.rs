//! Audio primitives: WAV I/O, power measurement, SIR-controlled mixing,
//! log-Mel features, and energy-based voice activity detection.
//!
//! All operations are pure functions over immutable inputs.

mod features;
mod mix;
mod vad;
mod wav;

pub use features::{log_mel, mel_filterbank, num_feature_frames, FeatureConfig};
pub use mix::{mean_power, mix_at_offsets, sir_gain, MixOutput};
pub use vad::energy_vad;
pub use wav::{load_wav, write_wav};

use crate::error::{Error, Result};
use crate::{Scalar, MASK_FRAME_S};

/// Mono PCM samples at a fixed sample rate, the raw signal unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip<T> {
    samples: Vec<T>,
    sample_rate_hz: u32,
}

impl<T: Scalar> AudioClip<T> {
    /// Builds a clip, rejecting a zero sample rate or non-finite samples.
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Audio("clip contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Number of non-overlapping 20 ms mask frames covering the clip.
    pub fn num_mask_frames(&self) -> usize {
        let per_frame = (self.sample_rate_hz as f64 * MASK_FRAME_S) as usize;
        self.samples.len().div_ceil(per_frame)
    }
}

/// Whether a mask holds binary targets or probability predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    BinaryTarget,
    ProbabilityPrediction,
}

/// Per-20ms-frame speaker-activity vector, either a binary target or a
/// probability prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVector<T> {
    values: Vec<T>,
    kind: MaskKind,
}

impl<T: Scalar> MaskVector<T> {
    /// Binary target mask; every value must be exactly 0 or 1.
    pub fn binary(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Audio("binary mask values must be 0 or 1".into()));
        }
        Ok(Self {
            values,
            kind: MaskKind::BinaryTarget,
        })
    }

    /// Probability mask; every value must lie in [0, 1].
    pub fn probability(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Audio("probability mask values must be in [0,1]".into()));
        }
        Ok(Self {
            values,
            kind: MaskKind::ProbabilityPrediction,
        })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Frame indices with value 1 (binary) or >= 0.5 (probability).
    pub fn active_frames(&self) -> Vec<usize> {
        let half = T::from_f(0.5);
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| match self.kind {
                MaskKind::BinaryTarget => v == T::one(),
                MaskKind::ProbabilityPrediction => v >= half,
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Maximal runs of active frames as (start_frame, len_frames).
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = None;
        let half = T::from_f(0.5);
        for (i, &v) in self.values.iter().enumerate() {
            let active = match self.kind {
                MaskKind::BinaryTarget => v == T::one(),
                MaskKind::ProbabilityPrediction => v >= half,
            };
            match (active, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.values.len() - s));
        }
        runs
    }

    /// Logical OR of two binary masks; the result covers the longer one.
    pub fn or(&self, other: &Self) -> Result<Self> {
        if self.kind != MaskKind::BinaryTarget || other.kind != MaskKind::BinaryTarget {
            return Err(Error::Audio("mask OR is defined on binary masks".into()));
        }
        let len = self.values.len().max(other.values.len());
        let mut out = vec![T::zero(); len];
        for (i, v) in out.iter_mut().enumerate() {
            let a = self.values.get(i).copied().unwrap_or_else(T::zero);
            let b = other.values.get(i).copied().unwrap_or_else(T::zero);
            *v = if a == T::one() || b == T::one() {
                T::one()
            } else {
                T::zero()
            };
        }
        Self::binary(out)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct MaskVectorRepr<T> {
    kind: MaskKind,
    values: Vec<T>,
}

impl<T: Scalar> serde::Serialize for MaskVector<T> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MaskVectorRepr { kind: self.kind, values: self.values.clone() }.serialize(serializer)
    }
}

impl<'de, T: Scalar> serde::Deserialize<'de> for MaskVector<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MaskVectorRepr::<T>::deserialize(deserializer)?;
        let built = match repr.kind {
            MaskKind::BinaryTarget => Self::binary(repr.values),
            MaskKind::ProbabilityPrediction => Self::probability(repr.values),
        };
        built.map_err(serde::de::Error::custom)
    }
}

/// T x M matrix of log-Mel energies, row-major, one row per 10 ms frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    data: Vec<T>,
    num_frames: usize,
    num_mels: usize,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub(crate) fn from_rows(data: Vec<T>, num_frames: usize, num_mels: usize) -> Self {
        debug_assert_eq!(data.len(), num_frames * num_mels);
        Self {
            data,
            num_frames,
            num_mels,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_mels(&self) -> usize {
        self.num_mels
    }

    pub fn row(&self, frame: usize) -> &[T] {
        &self.data[frame * self.num_mels..(frame + 1) * self.num_mels]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}
