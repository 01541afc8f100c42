//! Overlapped-speech mixture simulation.
//!
//! Two overlap layouts are produced from pairs of single-speaker utterances:
//!
//! * case 1 — utterance A, then utterance B from another speaker placed so
//!   B's head overlaps A's tail;
//! * case 2 — speaker 1 talks, speaker 2 overlaps the hand-off, speaker 1
//!   returns: A1, then B overlapping A1's tail, then A2 overlapping B's tail
//!   (with a guaranteed gap between A1 and A2, so speaker 1's activity mask
//!   has at least two runs).
//!
//! Interference loudness is set by a signal-to-interference ratio over the
//! full source clips, and every mixture carries per-speaker binary activity
//! masks on the 20 ms grid, built from energy VAD intersected with word
//! alignments.

mod corpus;
mod manifest;
mod mixture;

pub use corpus::{gen_toy_corpus, load_corpus, save_corpus, TOY_WORD_S};
pub use manifest::{
    build_training_set, load_masks, read_manifest, save_masks, write_training_set, ManifestEntry,
    ManifestSource, MixturePlan,
};
pub use mixture::{make_case1, make_case2, make_original, mask_targets, speaker_spans, MaskTargets};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::signal::{AudioClip, MaskVector};
use crate::Scalar;

/// Default energy-VAD threshold relative to the loudest frame.
pub const DEFAULT_VAD_THRESHOLD_DB: f64 = -40.0;

/// A single-speaker recording with its transcript and word alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<T> {
    pub id: String,
    pub audio: AudioClip<T>,
    pub speaker_id: String,
    /// Space-separated words.
    pub transcript: String,
    /// (word, start, end) in clip time, monotone, within the clip.
    pub word_alignments: Vec<(String, f64, f64)>,
}

impl<T: Scalar> Utterance<T> {
    pub fn duration_s(&self) -> f64 {
        self.audio.duration_s()
    }
}

/// Which overlap layout produced a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    /// Untouched single-speaker utterance.
    Original,
    /// A then B, tail-head overlap.
    Case1,
    /// A1, B, A2 with two overlaps.
    Case2,
}

impl std::fmt::Display for CaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaseKind::Original => "original",
            CaseKind::Case1 => "case1",
            CaseKind::Case2 => "case2",
        })
    }
}

/// One source's placement inside a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePlacement<T> {
    pub utterance: Utterance<T>,
    pub offset_s: f64,
    pub gain: T,
}

/// A simulated (or pass-through) mixture with per-speaker mask targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample<T> {
    pub id: String,
    pub mixture: AudioClip<T>,
    /// In placement order (earliest offset first).
    pub sources: Vec<SourcePlacement<T>>,
    pub num_speakers: usize,
    /// Binary activity per speaker over the mixture's 20 ms frames.
    pub speaker_masks: BTreeMap<String, MaskVector<T>>,
    pub case_kind: CaseKind,
    /// Largest absolute sample value before any write-time normalization.
    pub peak: f64,
    /// True when some source had no word alignments and its mask fell back
    /// to pure VAD.
    pub alignment_fallback: bool,
}

impl<T: Scalar> MixtureExample<T> {
    /// The per-speaker transcribed spans in mixture time, ready for label
    /// building and scoring references. Speaker indices number the distinct
    /// speakers by first appearance in source order.
    pub fn reference(&self) -> Vec<crate::labels::Utterance> {
        let mut speaker_index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut next = 0usize;
        let mut out = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            let idx = *speaker_index.entry(s.utterance.speaker_id.as_str()).or_insert_with(|| {
                next += 1;
                next - 1
            });
            let (start, end) = match (
                s.utterance.word_alignments.first(),
                s.utterance.word_alignments.last(),
            ) {
                (Some(first), Some(last)) => (first.1, last.2),
                _ => (0.0, s.utterance.duration_s()),
            };
            out.push(crate::labels::Utterance {
                speaker: idx,
                text: s.utterance.transcript.clone(),
                start_s: s.offset_s + start,
                end_s: s.offset_s + end,
            });
        }
        out
    }
}

/// Relative part sizes for assembled training sets; each part contributes
/// (weight x corpus size) examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub original: u32,
    pub case1: u32,
    pub case2: u32,
}

impl RatioSpec {
    pub fn total(&self) -> u32 {
        self.original + self.case1 + self.case2
    }
}

impl Default for RatioSpec {
    /// Equal parts of all three kinds.
    fn default() -> Self {
        Self { original: 1, case1: 1, case2: 1 }
    }
}
