//! Greedy autoregressive decoding and conversion of decoder output —
//! timestamp tokens or predicted activity masks — into diarization
//! annotations, with RTTM and JSON output forms.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{parse_hypothesis, LabelScheme, SpeakerBlock, TokenClass, Vocabulary};
use crate::model::Model;
use crate::signal::{FeatureMatrix, MaskVector};
use crate::{Scalar, MASK_FRAME_S};

/// Activity threshold for turning probability masks into segments.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Decoder output for one utterance: the parsed speaker blocks plus the
/// mask predicted at each emitted speaker token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Hypothesis<T: Scalar> {
    /// Tokens the model emitted after SOT, including EOT when reached.
    pub tokens: Vec<u32>,
    pub scheme: LabelScheme,
    pub blocks: Vec<SpeakerBlock>,
    /// Speaker index (1-based, as emitted) to predicted activity. A key
    /// exists for exactly the speaker tokens in `tokens`; if a decode
    /// degenerates and repeats one, the last prediction wins.
    pub masks: BTreeMap<usize, MaskVector<T>>,
    pub malformed_token_count: usize,
}

/// Where a diarization annotation's segments came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiarizationSource {
    Timestamps,
    Mask,
}

/// One speaker-attributed time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Speaker-attributed segments with a normalized layout: sorted by
/// (speaker, start), and per-speaker spans non-overlapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizationAnnotation {
    segments: Vec<Segment>,
    pub source: DiarizationSource,
}

impl DiarizationAnnotation {
    /// Builds an annotation, rejecting empty or backwards spans and merging
    /// overlapping or touching spans of the same speaker.
    pub fn new(mut segments: Vec<Segment>, source: DiarizationSource) -> Result<Self> {
        for s in &segments {
            if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s < s.end_s) {
                return Err(Error::Data(format!(
                    "segment for {} has invalid span [{}, {}]",
                    s.speaker, s.start_s, s.end_s
                )));
            }
        }
        segments.sort_by(|a, b| {
            (a.speaker.as_str(), a.start_s)
                .partial_cmp(&(b.speaker.as_str(), b.start_s))
                .expect("finite starts")
        });
        let mut merged: Vec<Segment> = Vec::with_capacity(segments.len());
        for s in segments {
            match merged.last_mut() {
                Some(prev) if prev.speaker == s.speaker && s.start_s <= prev.end_s => {
                    prev.end_s = prev.end_s.max(s.end_s);
                }
                _ => merged.push(s),
            }
        }
        Ok(Self { segments: merged, source })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Distinct speakers, in segment order.
    pub fn speakers(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if !out.contains(&s.speaker.as_str()) {
                out.push(&s.speaker);
            }
        }
        out
    }
}

/// Runs greedy decoding and returns just the emitted token sequence.
pub fn greedy_decode<T: Scalar>(
    model: &Model<T>,
    features: &FeatureMatrix<T>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<u32>> {
    run_decode(model, features, vocab, max_len).map(|(tokens, _)| tokens)
}

/// Runs greedy decoding, collects the mask predicted at every emitted
/// speaker token, and parses the output under `scheme`.
pub fn decode_hypothesis<T: Scalar>(
    model: &Model<T>,
    features: &FeatureMatrix<T>,
    vocab: &Vocabulary,
    scheme: LabelScheme,
    max_len: usize,
) -> Result<Hypothesis<T>> {
    let (tokens, masks) = run_decode(model, features, vocab, max_len)?;
    let parsed = parse_hypothesis(&tokens, scheme, vocab);
    Ok(Hypothesis {
        tokens,
        scheme,
        blocks: parsed.blocks,
        masks,
        malformed_token_count: parsed.malformed_tokens,
    })
}

/// The shared decode loop: encode once, then extend the token prefix one
/// argmax step at a time (ties to the lowest token id) until EOT or
/// `max_len` emitted tokens. The mask branch runs at each position that
/// emits a speaker token — the same gating rule training uses.
fn run_decode<T: Scalar>(
    model: &Model<T>,
    features: &FeatureMatrix<T>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<(Vec<u32>, BTreeMap<usize, MaskVector<T>>)> {
    let mut out = Vec::new();
    let mut masks = BTreeMap::new();
    if max_len == 0 {
        return Ok((out, masks));
    }
    let mut session = model.session(false);
    // Eval mode skips dropout, so this rng never draws; the branch signature
    // just requires one.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let encoded = session.encode(features)?;
    let mut prefix = vec![vocab.sot_id()];
    loop {
        let (logits, hidden) = session.decoder_forward(encoded, &prefix)?;
        let position = prefix.len() - 1;
        let next = argmax_lowest(session.value(logits).row(position));
        out.push(next);
        if let Some(TokenClass::Speaker(k)) = vocab.classify(next) {
            let node = session.mask_branch(hidden, position, encoded, &mut rng)?;
            masks.insert(k, session.mask_probabilities(node)?);
        }
        if next == vocab.eot_id() || out.len() == max_len {
            return Ok((out, masks));
        }
        prefix.push(next);
    }
}

fn argmax_lowest<T: Scalar>(row: &[T]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Thresholds a mask and groups active frames into maximal runs, dropping
/// runs shorter than `min_dur_s`. Times are on the 20 ms frame grid: a run
/// over frames i..=j becomes (i * 0.02, (j + 1) * 0.02).
pub fn mask_to_segments<T: Scalar>(
    mask: &MaskVector<T>,
    threshold: f64,
    min_dur_s: f64,
) -> Vec<(f64, f64)> {
    let thr = T::from_f(threshold);
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &v) in mask.values().iter().enumerate() {
        match (v >= thr, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, mask.len()));
    }
    spans
        .into_iter()
        .filter(|(s, e)| (e - s) as f64 * MASK_FRAME_S >= min_dur_s)
        .map(|(s, e)| (s as f64 * MASK_FRAME_S, e as f64 * MASK_FRAME_S))
        .collect()
}

/// Inverse of [`mask_to_segments`] on the frame grid: frame f is active
/// when its center falls inside any segment. Returns a binary mask of
/// `num_frames` frames.
pub fn segments_to_mask<T: Scalar>(segments: &[(f64, f64)], num_frames: usize) -> MaskVector<T> {
    let mut values = vec![T::zero(); num_frames];
    for &(start, end) in segments {
        for (f, v) in values.iter_mut().enumerate() {
            let center = (f as f64 + 0.5) * MASK_FRAME_S;
            if center >= start && center < end {
                *v = T::one();
            }
        }
    }
    MaskVector::binary(values).expect("zeros and ones")
}

/// How to turn a hypothesis into diarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiarizationMode {
    /// One segment per speaker block, from the emitted timestamp tokens.
    /// A long pause inside a speaker's turn stays bridged — the known
    /// failure shape for sandwiched same-speaker utterances.
    Timestamps,
    /// Segments from each speaker's predicted mask.
    Mask,
}

/// Converts decoder output into a diarization annotation. Speaker k is
/// named "s{k}". Blocks without a speaker, without timestamps, or with an
/// empty span contribute nothing in timestamps mode (the malformed-token
/// count already reflects them).
pub fn hypothesis_to_diarization<T: Scalar>(
    hyp: &Hypothesis<T>,
    mode: DiarizationMode,
    min_dur_s: f64,
) -> Result<DiarizationAnnotation> {
    match mode {
        DiarizationMode::Timestamps => {
            if !hyp.scheme.uses_timestamps() {
                return Err(Error::Data(format!(
                    "timestamps mode needs a timestamped scheme, hypothesis uses {}",
                    hyp.scheme
                )));
            }
            let mut segments = Vec::new();
            for block in &hyp.blocks {
                if let (Some(k), Some(start), Some(end)) = (block.speaker, block.start_s, block.end_s) {
                    if start < end {
                        segments.push(Segment {
                            speaker: format!("s{k}"),
                            start_s: start,
                            end_s: end,
                        });
                    }
                }
            }
            DiarizationAnnotation::new(segments, DiarizationSource::Timestamps)
        }
        DiarizationMode::Mask => {
            let mut segments = Vec::new();
            for (k, mask) in &hyp.masks {
                for (start, end) in mask_to_segments(mask, MASK_THRESHOLD, min_dur_s) {
                    segments.push(Segment {
                        speaker: format!("s{k}"),
                        start_s: start,
                        end_s: end,
                    });
                }
            }
            DiarizationAnnotation::new(segments, DiarizationSource::Mask)
        }
    }
}

/// Formats an annotation as RTTM speaker lines for one recording.
pub fn format_rttm(uri: &str, annotation: &DiarizationAnnotation) -> String {
    let mut out = String::new();
    for s in annotation.segments() {
        out.push_str(&format!(
            "SPEAKER {uri} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>\n",
            s.start_s,
            s.end_s - s.start_s,
            s.speaker
        ));
    }
    out
}

/// Parses RTTM speaker lines back into per-recording segments. Lines of
/// other RTTM record types are ignored.
pub fn parse_rttm(text: &str) -> Result<BTreeMap<String, Vec<Segment>>> {
    let mut out: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Data(format!("rttm line {}: too few fields", lineno + 1)));
        }
        let parse = |v: &str, what: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Data(format!("rttm line {}: bad {what} {v:?}", lineno + 1)))
        };
        let tbeg = parse(fields[3], "onset")?;
        let tdur = parse(fields[4], "duration")?;
        out.entry(fields[1].to_string()).or_default().push(Segment {
            speaker: fields[7].to_string(),
            start_s: tbeg,
            end_s: tbeg + tdur,
        });
    }
    Ok(out)
}

/// One utterance's decode result, the unit of the JSON dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DecodedUtterance<T: Scalar> {
    pub id: String,
    pub hypothesis: Hypothesis<T>,
}

/// Writes decode results as JSON lines, one utterance per line.
pub fn save_hypotheses<T: Scalar>(path: &Path, decoded: &[DecodedUtterance<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in decoded {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines decode dump.
pub fn load_hypotheses<T: Scalar>(path: &Path) -> Result<Vec<DecodedUtterance<T>>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
