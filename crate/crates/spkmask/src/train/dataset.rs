//! Turning simulated mixtures into ready-to-train examples: features, one
//! label scheme's token sequence, and per-gate mask targets sized to the
//! model's frame budget.

use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{self, build_label, LabelScheme, Vocabulary};
use crate::model::{gate_positions, ModelConfig};
use crate::signal::{load_wav, log_mel, AudioClip, FeatureConfig, FeatureMatrix, MaskVector};
use crate::simulate::{load_masks, read_manifest, MixtureExample};
use crate::Scalar;

/// One mixture, ready for the training loop.
#[derive(Debug, Clone)]
pub struct TrainExample<T: Scalar> {
    pub id: String,
    pub features: FeatureMatrix<T>,
    /// Full label token sequence, SOT through EOT.
    pub label: Vec<u32>,
    /// Gated decoder positions with that speaker's activity target, already
    /// padded or truncated to the model's frame budget.
    pub gates: Vec<(usize, MaskVector<T>)>,
}

/// Loads every manifest entry from disk: reads the WAV (undoing the
/// recorded anti-clipping gain), extracts features, picks the stored label
/// for `scheme`, and resolves each gated speaker token to its mask target.
pub fn load_training_set<T: Scalar>(
    manifest_path: &Path,
    scheme: LabelScheme,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
) -> Result<Vec<TrainExample<T>>> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for entry in read_manifest(manifest_path)? {
        let mut clip: AudioClip<T> = load_wav(&dir.join(&entry.audio_path))?;
        if entry.wav_gain != 1.0 {
            let inv = T::from_f(1.0 / entry.wav_gain);
            let samples = clip.samples().iter().map(|&s| s * inv).collect();
            clip = AudioClip::new(samples, clip.sample_rate_hz())?;
        }
        let label = entry
            .labels
            .get(scheme.name())
            .ok_or_else(|| {
                Error::Data(format!("{}: no stored label for scheme {scheme}", entry.id))
            })?
            .clone();
        let masks = load_masks(&dir.join(&entry.masks_path))?;
        let speaker_order: Vec<String> = {
            let mut seen = Vec::new();
            for s in &entry.sources {
                if !seen.contains(&s.speaker_id) {
                    seen.push(s.speaker_id.clone());
                }
            }
            seen
        };
        out.push(assemble_example(
            entry.id.clone(),
            &clip,
            label,
            &entry.reference,
            &speaker_order,
            &masks,
            vocab,
            model_config,
        )?);
    }
    Ok(out)
}

/// In-memory variant of [`load_training_set`]: converts simulated examples
/// directly, building the label for `scheme` on the fly.
pub fn examples_to_training_set<T: Scalar>(
    examples: &[MixtureExample<T>],
    scheme: LabelScheme,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
) -> Result<Vec<TrainExample<T>>> {
    examples
        .iter()
        .map(|ex| {
            let reference = ex.reference();
            let label = build_label(&reference, scheme, vocab)?.tokens;
            let speaker_order: Vec<String> = {
                let mut seen = Vec::new();
                for s in &ex.sources {
                    if !seen.contains(&s.utterance.speaker_id) {
                        seen.push(s.utterance.speaker_id.clone());
                    }
                }
                seen
            };
            assemble_example(
                ex.id.clone(),
                &ex.mixture,
                label,
                &reference,
                &speaker_order,
                &ex.speaker_masks,
                vocab,
                model_config,
            )
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble_example<T: Scalar>(
    id: String,
    clip: &AudioClip<T>,
    label: Vec<u32>,
    reference: &[labels::Utterance],
    speaker_order: &[String],
    masks: &std::collections::BTreeMap<String, MaskVector<T>>,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
) -> Result<TrainExample<T>> {
    let features = log_mel(clip, &FeatureConfig { num_mels: model_config.num_mels })?;
    let fifo = fifo_speaker_ids(reference, speaker_order);
    let mut gates = Vec::new();
    for (position, k) in gate_positions(&label, vocab) {
        let speaker_id = fifo.get(k - 1).ok_or_else(|| {
            Error::Data(format!("{id}: label names speaker {k}, reference has {}", fifo.len()))
        })?;
        let mask = masks
            .get(speaker_id)
            .ok_or_else(|| Error::Data(format!("{id}: no mask for speaker {speaker_id}")))?;
        gates.push((position, fit_mask(mask, model_config.max_frames)?));
    }
    Ok(TrainExample { id, features, label, gates })
}

/// Speaker ids in label numbering order: `<s_k>` is `result[k - 1]`.
///
/// Label speakers are numbered first-in-first-out by the earliest start of
/// each speaker's merged block, which is exactly how the serializer orders
/// them; this reproduces that order from the reference and the
/// first-appearance order of speaker ids in the mixture's source list.
fn fifo_speaker_ids(reference: &[labels::Utterance], speaker_order: &[String]) -> Vec<String> {
    let mut earliest: Vec<(usize, f64)> = Vec::new();
    for utt in reference {
        match earliest.iter_mut().find(|(s, _)| *s == utt.speaker) {
            Some((_, start)) => *start = start.min(utt.start_s),
            None => earliest.push((utt.speaker, utt.start_s)),
        }
    }
    earliest.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite start times"));
    earliest
        .into_iter()
        .filter_map(|(speaker, _)| speaker_order.get(speaker).cloned())
        .collect()
}

/// Pads with inactive frames or truncates so the mask is exactly
/// `num_frames` long.
fn fit_mask<T: Scalar>(mask: &MaskVector<T>, num_frames: usize) -> Result<MaskVector<T>> {
    let mut values = mask.values().to_vec();
    values.resize(num_frames, T::zero());
    MaskVector::binary(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaskVariant;
    use crate::simulate::{
        build_training_set, gen_toy_corpus, write_training_set, MixturePlan, RatioSpec,
    };

    fn desk_config(vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            max_frames: 64,
            mask_variant: MaskVariant::LFc,
            ..ModelConfig::desk(vocab.size())
        }
    }

    #[test]
    fn in_memory_and_on_disk_paths_agree() {
        let vocab = Vocabulary::default_desk();
        let corpus = gen_toy_corpus::<f64>(2, 2, &vocab, 5).unwrap();
        let plan = MixturePlan {
            ratio: RatioSpec { original: 1, case1: 1, case2: 1 },
            ..MixturePlan::default()
        };
        let examples = build_training_set(&corpus, &plan).unwrap();
        let config = desk_config(&vocab);

        let direct = examples_to_training_set(&examples, LabelScheme::SpkTs2, &vocab, &config)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let manifest = write_training_set(&examples, dir.path(), &vocab).unwrap();
        let loaded: Vec<TrainExample<f64>> =
            load_training_set(&manifest, LabelScheme::SpkTs2, &vocab, &config).unwrap();

        assert_eq!(direct.len(), loaded.len());
        for (a, b) in direct.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.gates.len(), b.gates.len());
            for ((pa, ma), (pb, mb)) in a.gates.iter().zip(&b.gates) {
                assert_eq!(pa, pb);
                assert_eq!(ma.values(), mb.values(), "{}", a.id);
            }
            // WAV quantization noise sits ~30 dB under the tone's spectral
            // leakage, swamping the near-empty mel bins in log space; only
            // the bins carrying the tones themselves compare meaningfully.
            assert_eq!(a.features.num_frames(), b.features.num_frames());
            let loud: Vec<(f64, f64)> = a
                .features
                .data()
                .iter()
                .zip(b.features.data())
                .filter(|(x, _)| **x > -3.0)
                .map(|(x, y)| (*x, *y))
                .collect();
            assert!(loud.len() * 10 > a.features.data().len(), "{}: too few loud bins", a.id);
            let mean = loud.iter().map(|(x, y)| (x - y).abs()).sum::<f64>() / loud.len() as f64;
            assert!(mean < 0.02, "{}: loud bins drifted by {mean} on average", a.id);
        }
    }

    #[test]
    fn gates_follow_label_speaker_numbering() {
        let vocab = Vocabulary::default_desk();
        let corpus = gen_toy_corpus::<f64>(3, 2, &vocab, 6).unwrap();
        let plan = MixturePlan {
            ratio: RatioSpec { original: 0, case1: 0, case2: 1 },
            ..MixturePlan::default()
        };
        let examples = build_training_set(&corpus, &plan).unwrap();
        let config = desk_config(&vocab);
        let set = examples_to_training_set(&examples, LabelScheme::Spk, &vocab, &config).unwrap();
        for (ex, t) in examples.iter().zip(&set) {
            // Sandwich mixtures: speaker 1 (the outer speaker) starts at 0,
            // so <s_1> must map to the first source's speaker and its gate
            // target must be that speaker's (fitted) mask.
            assert_eq!(t.gates.len(), 2, "{}", t.id);
            let first_speaker = &ex.sources[0].utterance.speaker_id;
            let expected = fit_mask(&ex.speaker_masks[first_speaker], 64).unwrap();
            assert_eq!(t.gates[0].1.values(), expected.values(), "{}", t.id);
        }
    }

    #[test]
    fn masks_are_fitted_to_the_frame_budget() {
        let long = MaskVector::binary(vec![1.0; 100]).unwrap();
        let fitted: MaskVector<f64> = fit_mask(&long, 64).unwrap();
        assert_eq!(fitted.len(), 64);
        let short = MaskVector::binary(vec![1.0; 10]).unwrap();
        let fitted: MaskVector<f64> = fit_mask(&short, 64).unwrap();
        assert_eq!(fitted.len(), 64);
        assert_eq!(fitted.active_frames().len(), 10);
    }

    #[test]
    fn fifo_order_is_by_earliest_start_not_source_order() {
        let reference = vec![
            labels::Utterance { speaker: 0, text: "aa".into(), start_s: 2.0, end_s: 3.0 },
            labels::Utterance { speaker: 1, text: "bb".into(), start_s: 0.5, end_s: 1.5 },
            labels::Utterance { speaker: 0, text: "cc".into(), start_s: 4.0, end_s: 5.0 },
        ];
        let order = vec!["alpha".to_string(), "beta".to_string()];
        assert_eq!(fifo_speaker_ids(&reference, &order), vec!["beta", "alpha"]);
    }
}
