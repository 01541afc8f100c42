//! Diarization error rate: piecewise-constant sweep over segment
//! boundaries, a forgiveness collar around reference boundaries, and an
//! exhaustive optimal speaker mapping.

use serde::{Deserialize, Serialize};

use crate::decode::DiarizationAnnotation;
use crate::error::{Error, Result};
use crate::metrics::wer::for_each_permutation;

/// Knobs for diarization scoring. `collar_s` excludes ±collar around every
/// reference segment boundary from scoring; `oracle_resolution_s` is the
/// frame size brute-force verification runs at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub collar_s: f64,
    pub oracle_resolution_s: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { collar_s: 0.2, oracle_resolution_s: 0.01 }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.collar_s >= 0.0 && self.collar_s.is_finite()) {
            return Err(Error::Score(format!("collar must be >= 0, got {}", self.collar_s)));
        }
        if !(self.oracle_resolution_s > 0.0) {
            return Err(Error::Score(format!(
                "oracle resolution must be positive, got {}",
                self.oracle_resolution_s
            )));
        }
        Ok(())
    }
}

/// Time-weighted diarization errors over the scored (non-collar) regions.
/// `der` is (miss + false alarm + confusion) / scored reference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerBreakdown {
    pub missed_s: f64,
    pub false_alarm_s: f64,
    pub confusion_s: f64,
    pub scored_ref_s: f64,
    pub der: f64,
}

impl DerBreakdown {
    pub fn new(missed_s: f64, false_alarm_s: f64, confusion_s: f64, scored_ref_s: f64) -> Result<Self> {
        if !(scored_ref_s > 0.0) {
            return Err(Error::Score(format!(
                "no scored reference speech remains (scored time {scored_ref_s}); \
                 the collar may have swallowed every segment"
            )));
        }
        Ok(Self {
            missed_s,
            false_alarm_s,
            confusion_s,
            scored_ref_s,
            der: (missed_s + false_alarm_s + confusion_s) / scored_ref_s,
        })
    }
}

#[derive(Debug, Clone)]
struct SpeakerSpans {
    names: Vec<String>,
    // Parallel to names: each speaker's sorted non-overlapping spans.
    spans: Vec<Vec<(f64, f64)>>,
}

impl SpeakerSpans {
    fn from_annotation(a: &DiarizationAnnotation) -> Self {
        let mut names: Vec<String> = Vec::new();
        let mut spans: Vec<Vec<(f64, f64)>> = Vec::new();
        for seg in a.segments() {
            match names.iter().position(|n| *n == seg.speaker) {
                Some(i) => spans[i].push((seg.start_s, seg.end_s)),
                None => {
                    names.push(seg.speaker.clone());
                    spans.push(vec![(seg.start_s, seg.end_s)]);
                }
            }
        }
        Self { names, spans }
    }

    fn active(&self, t: f64) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&i| self.spans[i].iter().any(|&(s, e)| s <= t && t < e))
            .collect()
    }
}

/// Merges possibly overlapping intervals into a sorted disjoint set.
fn merge_intervals(mut intervals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    intervals.retain(|(s, e)| e > s);
    intervals.sort_by(|a, b| a.partial_cmp(b).expect("finite interval bounds"));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
    for (s, e) in intervals {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

/// Diarization error rate of `hypothesis` against `reference`.
///
/// Scoring follows the usual evaluation convention: time within
/// `config.collar_s` of any reference segment boundary is excluded; the
/// hypothesis-to-reference speaker mapping is the injective one maximizing
/// attributed overlap (exhaustive search); each scored instant demands
/// simultaneous attribution, so one correct speaker out of two concurrent
/// reference speakers still leaves a miss for the other.
pub fn der(
    reference: &DiarizationAnnotation,
    hypothesis: &DiarizationAnnotation,
    config: &ScoringConfig,
) -> Result<DerBreakdown> {
    config.validate()?;
    if reference.segments().is_empty() {
        return Err(Error::Score("diarization scoring needs a nonempty reference".into()));
    }
    let ref_spans = SpeakerSpans::from_annotation(reference);
    let hyp_spans = SpeakerSpans::from_annotation(hypothesis);

    let no_score = merge_intervals(
        reference
            .segments()
            .iter()
            .flat_map(|s| [s.start_s, s.end_s])
            .map(|b| (b - config.collar_s, b + config.collar_s))
            .collect(),
    );

    // Elementary intervals: between consecutive event points the active
    // speaker sets and the collar state are all constant.
    let mut points: Vec<f64> = Vec::new();
    for spans in ref_spans.spans.iter().chain(&hyp_spans.spans) {
        for &(s, e) in spans {
            points.push(s);
            points.push(e);
        }
    }
    for &(s, e) in &no_score {
        points.push(s);
        points.push(e);
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite event points"));
    points.dedup();

    struct Piece {
        duration: f64,
        ref_active: Vec<usize>,
        hyp_active: Vec<usize>,
    }
    let mut pieces = Vec::new();
    for w in points.windows(2) {
        let (start, end) = (w[0], w[1]);
        let mid = 0.5 * (start + end);
        if no_score.iter().any(|&(s, e)| s <= mid && mid < e) {
            continue;
        }
        let ref_active = ref_spans.active(mid);
        let hyp_active = hyp_spans.active(mid);
        if ref_active.is_empty() && hyp_active.is_empty() {
            continue;
        }
        pieces.push(Piece { duration: end - start, ref_active, hyp_active });
    }

    // Overlap matrix on scored time only, then the assignment maximizing
    // mapped overlap. Both speaker lists are padded to a square so one
    // permutation enumeration covers unmapped speakers on either side.
    let k = ref_spans.names.len().max(hyp_spans.names.len());
    let mut overlap = vec![0.0f64; k * k];
    for p in &pieces {
        for &r in &p.ref_active {
            for &h in &p.hyp_active {
                overlap[h * k + r] += p.duration;
            }
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(k, &mut |assignment| {
        let total: f64 = assignment
            .iter()
            .enumerate()
            .filter(|(h, &r)| *h < hyp_spans.names.len() && r < ref_spans.names.len())
            .map(|(h, &r)| overlap[h * k + r])
            .sum();
        if best.as_ref().is_none_or(|(t, _)| total > *t) {
            best = Some((total, assignment.to_vec()));
        }
    });
    let mapping = best.map(|(_, m)| m).unwrap_or_default();

    let (mut miss, mut fa, mut conf, mut scored) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in &pieces {
        let n_ref = p.ref_active.len() as f64;
        let n_hyp = p.hyp_active.len() as f64;
        let correct = p
            .hyp_active
            .iter()
            .filter(|&&h| p.ref_active.contains(&mapping[h]))
            .count() as f64;
        miss += p.duration * (n_ref - n_hyp).max(0.0);
        fa += p.duration * (n_hyp - n_ref).max(0.0);
        conf += p.duration * (n_ref.min(n_hyp) - correct);
        scored += p.duration * n_ref;
    }
    DerBreakdown::new(miss, fa, conf, scored)
}

/// Speaker-count check for one utterance.
pub fn speaker_count_correct(ref_count: usize, hyp_count: usize) -> bool {
    ref_count == hyp_count
}

/// Speaker count accuracy over a set, as a percentage.
pub fn sca(pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Score("speaker count accuracy needs at least one utterance".into()));
    }
    let correct = pairs.iter().filter(|&&(r, h)| speaker_count_correct(r, h)).count();
    Ok(correct as f64 * 100.0 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{DiarizationSource, Segment};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ann(segs: &[(&str, f64, f64)]) -> DiarizationAnnotation {
        DiarizationAnnotation::new(
            segs.iter()
                .map(|&(sp, s, e)| Segment { speaker: sp.into(), start_s: s, end_s: e })
                .collect(),
            DiarizationSource::Timestamps,
        )
        .unwrap()
    }

    fn no_collar() -> ScoringConfig {
        ScoringConfig { collar_s: 0.0, ..ScoringConfig::default() }
    }

    #[test]
    fn identical_annotations_score_zero() {
        let a = ann(&[("s1", 0.0, 3.0), ("s2", 2.0, 5.0), ("s1", 6.0, 7.0)]);
        let b = der(&a, &a, &ScoringConfig::default()).unwrap();
        assert_eq!(b.missed_s, 0.0);
        assert_eq!(b.false_alarm_s, 0.0);
        assert_eq!(b.confusion_s, 0.0);
        assert_eq!(b.der, 0.0);
        assert!(b.scored_ref_s > 0.0);
    }

    #[test]
    fn boundary_jitter_inside_the_collar_is_free() {
        let reference = ann(&[("a", 0.0, 3.0), ("b", 4.0, 6.0)]);
        let shifted = ann(&[("a", 0.1, 3.0), ("b", 4.0, 6.1)]);
        let b = der(&reference, &shifted, &ScoringConfig::default()).unwrap();
        assert_eq!(b.der, 0.0);
        // Without the collar the same jitter costs miss + false alarm.
        let strict = der(&reference, &shifted, &no_collar()).unwrap();
        assert!((strict.missed_s - 0.1).abs() < 1e-9);
        assert!((strict.false_alarm_s - 0.1).abs() < 1e-9);
    }

    #[test]
    fn empty_reference_is_rejected() {
        let empty = DiarizationAnnotation::new(vec![], DiarizationSource::Mask).unwrap();
        let hyp = ann(&[("a", 0.0, 1.0)]);
        assert!(der(&empty, &hyp, &ScoringConfig::default()).is_err());
    }

    #[test]
    fn confusion_counts_wrongly_attributed_time() {
        // Ref: a over [0,10]. Hyp: right speaker for 9 s, the other for 1 s.
        let reference = ann(&[("a", 0.0, 10.0)]);
        let hyp = ann(&[("x", 0.0, 9.0), ("y", 9.0, 10.0)]);
        let config = no_collar();
        let b = der(&reference, &hyp, &config).unwrap();
        assert!((b.confusion_s - 1.0).abs() < 1e-9);
        assert!((b.scored_ref_s - 10.0).abs() < 1e-9);
        assert!((b.der - 0.1).abs() < 1e-9);
        // The 10 ms frame-sampled computation lands within a frame of it.
        let oracle = frame_der_oracle(&reference, &hyp, &config).unwrap();
        assert!((b.der - oracle).abs() <= config.oracle_resolution_s / b.scored_ref_s + 1e-9);
    }

    #[test]
    fn overlap_requires_simultaneous_attribution() {
        // Two reference speakers talk together over [0,2]; the hypothesis
        // only finds one of them. The found one maps correctly, the other
        // is missed for the full overlap.
        let reference = ann(&[("a", 0.0, 2.0), ("b", 0.0, 2.0)]);
        let hyp = ann(&[("x", 0.0, 2.0)]);
        let b = der(&reference, &hyp, &no_collar()).unwrap();
        assert!((b.missed_s - 2.0).abs() < 1e-9);
        assert_eq!(b.confusion_s, 0.0);
        assert_eq!(b.false_alarm_s, 0.0);
        assert!((b.scored_ref_s - 4.0).abs() < 1e-9);
    }

    #[test]
    fn hypothesis_speaker_names_do_not_matter() {
        let reference = ann(&[("a", 0.0, 3.0), ("b", 3.0, 6.0)]);
        let hyp1 = ann(&[("p", 0.0, 3.0), ("q", 3.0, 6.0)]);
        let hyp2 = ann(&[("q", 0.0, 3.0), ("p", 3.0, 6.0)]);
        let d1 = der(&reference, &hyp1, &ScoringConfig::default()).unwrap();
        let d2 = der(&reference, &hyp2, &ScoringConfig::default()).unwrap();
        assert_eq!(d1.der, d2.der);
        assert_eq!(d1.der, 0.0);
    }

    #[test]
    fn extra_hypothesis_speech_is_false_alarm() {
        let reference = ann(&[("a", 0.0, 5.0)]);
        let hyp = ann(&[("x", 0.0, 5.0), ("y", 10.0, 12.0)]);
        let b = der(&reference, &hyp, &no_collar()).unwrap();
        assert!((b.false_alarm_s - 2.0).abs() < 1e-9);
        assert!((b.der - 0.4).abs() < 1e-9);
    }

    #[test]
    fn sca_checks_and_aggregates() {
        assert!(speaker_count_correct(2, 2));
        assert!(!speaker_count_correct(2, 1));
        let pct = sca(&[(2, 2), (1, 1), (2, 1), (3, 3)]).unwrap();
        assert_eq!(pct, 75.0);
        assert!(sca(&[]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let reference = ann(&[("a", 0.0, 1.0)]);
        let bad = ScoringConfig { collar_s: -0.1, ..ScoringConfig::default() };
        assert!(der(&reference, &reference, &bad).is_err());
    }

    /// Frame-sampled DER with its own exhaustive mapping search — no shared
    /// machinery with the sweep implementation.
    fn frame_der_oracle(
        reference: &DiarizationAnnotation,
        hypothesis: &DiarizationAnnotation,
        config: &ScoringConfig,
    ) -> Option<f64> {
        let res = config.oracle_resolution_s;
        let no_score: Vec<(f64, f64)> = reference
            .segments()
            .iter()
            .flat_map(|s| [s.start_s, s.end_s])
            .map(|b| (b - config.collar_s, b + config.collar_s))
            .collect();
        let horizon = reference
            .segments()
            .iter()
            .chain(hypothesis.segments())
            .map(|s| s.end_s)
            .fold(0.0f64, f64::max)
            + config.collar_s
            + 1.0;
        let num_frames = (horizon / res).ceil() as usize;

        let ref_speakers: Vec<&str> = {
            let mut v: Vec<&str> = reference.segments().iter().map(|s| s.speaker.as_str()).collect();
            v.sort();
            v.dedup();
            v
        };
        let hyp_speakers: Vec<&str> = {
            let mut v: Vec<&str> = hypothesis.segments().iter().map(|s| s.speaker.as_str()).collect();
            v.sort();
            v.dedup();
            v
        };

        // active[frame] -> (ref set, hyp set) as index bitmasks.
        let actives: Vec<(u32, u32, bool)> = (0..num_frames)
            .map(|f| {
                let t = (f as f64 + 0.5) * res;
                let skip = no_score.iter().any(|&(s, e)| s <= t && t < e);
                let mut r = 0u32;
                for seg in reference.segments() {
                    if seg.start_s <= t && t < seg.end_s {
                        let i = ref_speakers.iter().position(|n| *n == seg.speaker).unwrap();
                        r |= 1 << i;
                    }
                }
                let mut h = 0u32;
                for seg in hypothesis.segments() {
                    if seg.start_s <= t && t < seg.end_s {
                        let i = hyp_speakers.iter().position(|n| *n == seg.speaker).unwrap();
                        h |= 1 << i;
                    }
                }
                (r, h, skip)
            })
            .collect();

        let k = ref_speakers.len().max(hyp_speakers.len());
        let mut best: Option<f64> = None;
        for_each_permutation(k, &mut |assignment| {
            let (mut err_frames, mut ref_frames) = (0f64, 0f64);
            for &(r, h, skip) in &actives {
                if skip {
                    continue;
                }
                let n_ref = r.count_ones() as f64;
                let n_hyp = h.count_ones() as f64;
                let mut correct = 0f64;
                for (hi, &ri) in assignment.iter().enumerate() {
                    if hi < hyp_speakers.len()
                        && ri < ref_speakers.len()
                        && h & (1 << hi) != 0
                        && r & (1 << ri) != 0
                    {
                        correct += 1.0;
                    }
                }
                err_frames += (n_ref - n_hyp).max(0.0)
                    + (n_hyp - n_ref).max(0.0)
                    + (n_ref.min(n_hyp) - correct);
                ref_frames += n_ref;
            }
            if ref_frames > 0.0 {
                let e = err_frames / ref_frames;
                if best.is_none_or(|b| e < b) {
                    best = Some(e);
                }
            }
        });
        best
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn self_comparison_is_always_zero(
            segs in proptest::collection::vec(
                (0usize..3, 0.0f64..10.0, 0.1f64..3.0),
                1..6,
            )
        ) {
            let names = ["a", "b", "c"];
            let annotation = ann(&segs
                .iter()
                .map(|&(sp, start, dur)| (names[sp], start, start + dur))
                .collect::<Vec<_>>());
            if let Ok(b) = der(&annotation, &annotation, &ScoringConfig::default()) {
                proptest::prop_assert_eq!(b.der, 0.0);
            }
        }
    }

    #[test]
    fn sweep_matches_frame_oracle_on_randomized_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(414);
        let config = ScoringConfig::default();
        let mut compared = 0;
        while compared < 200 {
            // Segments run well past the collar width so the scored region
            // stays substantial; the tolerance formula below assumes the
            // denominator is not itself quantization-dominated.
            let gen_ann = |rng: &mut ChaCha8Rng, speakers: &[&str]| {
                let mut segs = Vec::new();
                for &sp in speakers {
                    for _ in 0..rng.gen_range(0..3) {
                        let start = rng.gen_range(0.0..8.0);
                        let dur = rng.gen_range(1.0..3.0);
                        segs.push(Segment {
                            speaker: sp.to_string(),
                            start_s: start,
                            end_s: start + dur,
                        });
                    }
                }
                DiarizationAnnotation::new(segs, DiarizationSource::Timestamps).unwrap()
            };
            let reference = gen_ann(&mut rng, &["a", "b", "c"]);
            let hyp = gen_ann(&mut rng, &["x", "y"]);
            if reference.segments().is_empty() {
                continue;
            }
            let Ok(swept) = der(&reference, &hyp, &config) else {
                continue; // collar consumed all scored time; nothing to compare
            };
            if swept.scored_ref_s < 1.0 {
                continue;
            }
            let Some(oracle) = frame_der_oracle(&reference, &hyp, &config) else {
                continue;
            };
            let boundaries =
                2.0 * (reference.segments().len() + hyp.segments().len()) as f64;
            let tolerance = 0.02 * boundaries / swept.scored_ref_s + 1e-9;
            assert!(
                (swept.der - oracle).abs() <= tolerance,
                "case {compared}: sweep {} vs oracle {} (tolerance {tolerance})",
                swept.der,
                oracle
            );
            compared += 1;
        }
    }
}
