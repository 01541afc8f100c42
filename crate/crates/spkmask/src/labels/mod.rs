//! Vocabulary and label codecs for multi-talker transcripts.
//!
//! Three serialization schemes cover the label formats the models train on:
//!
//! * [`LabelScheme::SpkTs1`] — `<s_k> <t_start> words <t_end>` per speaker
//! * [`LabelScheme::SpkTs2`] — `<s_k> <t_start> <t_end> words` per speaker
//! * [`LabelScheme::Spk`]   — `<s_k> words` per speaker, no timestamps
//!
//! Every label starts with SOT and ends with EOT. Speakers are numbered by
//! who speaks first (first-in, first-out), and a speaker appearing several
//! times contributes a single block whose texts are concatenated in temporal
//! order and whose span runs from their earliest start to their latest end.

mod codec;
mod vocab;

pub use codec::{build_label, dequantize_time, parse_hypothesis, quantize_time, ParsedHypothesis};
pub use vocab::{TokenClass, Vocabulary};

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// How a transcript is serialized into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelScheme {
    /// `<s_k> <t_start> words <t_end>`
    #[serde(rename = "spk-ts-1")]
    SpkTs1,
    /// `<s_k> <t_start> <t_end> words`
    #[serde(rename = "spk-ts-2")]
    SpkTs2,
    /// `<s_k> words`
    #[serde(rename = "spk")]
    Spk,
}

impl LabelScheme {
    pub const ALL: [LabelScheme; 3] = [LabelScheme::SpkTs1, LabelScheme::SpkTs2, LabelScheme::Spk];

    pub fn name(self) -> &'static str {
        match self {
            LabelScheme::SpkTs1 => "spk-ts-1",
            LabelScheme::SpkTs2 => "spk-ts-2",
            LabelScheme::Spk => "spk",
        }
    }

    pub fn uses_timestamps(self) -> bool {
        !matches!(self, LabelScheme::Spk)
    }
}

impl std::fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "spk-ts-1" => Ok(LabelScheme::SpkTs1),
            "spk-ts-2" => Ok(LabelScheme::SpkTs2),
            "spk" => Ok(LabelScheme::Spk),
            other => Err(Error::Config(format!(
                "unknown label scheme '{other}' (expected spk-ts-1, spk-ts-2, or spk)"
            ))),
        }
    }
}

/// One transcribed span of one speaker inside a mixture, in mixture time.
/// The codec input: simulation produces these alongside the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    /// Caller-side speaker identity; any value, used only for grouping.
    pub speaker: usize,
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// A serialized label: SOT ... EOT token ids under one scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSequence {
    pub scheme: LabelScheme,
    pub tokens: Vec<u32>,
}

/// One speaker's chunk of a parsed hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBlock {
    /// 1-based speaker-token index; None for text with no speaker token.
    pub speaker: Option<usize>,
    pub text: String,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
}
