//! Scoring: word error rate over optimally paired speaker streams,
//! diarization error rate with a boundary collar, speaker count accuracy,
//! and a JSON report tying them together per utterance and corpus-wide.

mod der;
mod wer;

pub use der::{der, sca, speaker_count_correct, DerBreakdown, ScoringConfig};
pub use wer::{cp_wer, wer, WerBreakdown};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub id: String,
    pub wer: WerBreakdown,
    pub der: DerBreakdown,
    pub ref_speaker_count: usize,
    pub hyp_speaker_count: usize,
    pub speaker_count_correct: bool,
}

/// Corpus-level aggregates: WER from summed edit counts, DER from summed
/// time components, SCA as a percentage of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub wer: WerBreakdown,
    pub der: DerBreakdown,
    pub sca_percent: f64,
    pub num_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_utterance: Vec<UtteranceScore>,
    pub corpus: CorpusSummary,
}

/// Aggregates per-utterance scores into a corpus summary. Error counts and
/// scored durations sum across utterances before the rates are recomputed,
/// so long utterances weigh more than short ones.
pub fn build_report(per_utterance: Vec<UtteranceScore>) -> Result<ScoreReport> {
    if per_utterance.is_empty() {
        return Err(Error::Score("a report needs at least one scored utterance".into()));
    }
    let (mut s, mut i, mut d, mut n) = (0usize, 0usize, 0usize, 0usize);
    let (mut miss, mut fa, mut conf, mut scored) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for u in &per_utterance {
        s += u.wer.substitutions;
        i += u.wer.insertions;
        d += u.wer.deletions;
        n += u.wer.ref_word_count;
        miss += u.der.missed_s;
        fa += u.der.false_alarm_s;
        conf += u.der.confusion_s;
        scored += u.der.scored_ref_s;
    }
    let pairs: Vec<(usize, usize)> = per_utterance
        .iter()
        .map(|u| (u.ref_speaker_count, u.hyp_speaker_count))
        .collect();
    let corpus = CorpusSummary {
        wer: WerBreakdown::new(s, i, d, n)?,
        der: DerBreakdown::new(miss, fa, conf, scored)?,
        sca_percent: sca(&pairs)?,
        num_utterances: per_utterance.len(),
    };
    Ok(ScoreReport { per_utterance, corpus })
}

pub fn save_report(path: &Path, report: &ScoreReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<ScoreReport> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
