//! Synthetic toy corpus: each speaker is a fundamental-frequency band, each
//! word a fixed-duration tone burst at a word-specific semitone offset, so
//! alignments are exact by construction and every clip is fully voiced.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Vocabulary;
use crate::signal::{load_wav, write_wav, AudioClip};
use crate::simulate::Utterance;
use crate::{Scalar, SAMPLE_RATE_HZ};

/// Duration of one toy word (and of its alignment span).
pub const TOY_WORD_S: f64 = 0.25;

/// Base fundamental of speaker 0; each further speaker sits 70 Hz higher.
const BASE_F0_HZ: f64 = 110.0;
const F0_STEP_HZ: f64 = 70.0;
const WORDS_PER_UTT: std::ops::RangeInclusive<usize> = 3..=6;
const LEXICON_SIZE: usize = 10;
const AMPLITUDE: f64 = 0.3;
/// Cosine fade at both ends of each word to avoid clicks.
const RAMP_S: f64 = 0.005;

/// Toy lexicon: doubled characters from the vocabulary ("aa", "bb", ...).
fn lexicon(vocab: &Vocabulary) -> Vec<String> {
    let mut words = Vec::new();
    for c in ('a'..='z').chain('0'..='9') {
        if words.len() == LEXICON_SIZE {
            break;
        }
        if vocab.char_id(c).is_ok() {
            words.push(format!("{c}{c}"));
        }
    }
    words
}

fn word_samples<T: Scalar>(f0: f64, word_index: usize) -> Vec<T> {
    let freq = f0 * (2.0f64).powf(word_index as f64 / 12.0);
    let n = (TOY_WORD_S * SAMPLE_RATE_HZ as f64).round() as usize;
    let ramp = (RAMP_S * SAMPLE_RATE_HZ as f64).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE_HZ as f64;
            let mut v = AMPLITUDE * (2.0 * std::f64::consts::PI * freq * t).sin();
            if i < ramp {
                v *= 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
            }
            let from_end = n - 1 - i;
            if from_end < ramp {
                v *= 0.5 - 0.5 * (std::f64::consts::PI * from_end as f64 / ramp as f64).cos();
            }
            T::from_f(v)
        })
        .collect()
}

/// Generates `num_speakers x utts_per_speaker` synthetic utterances with
/// exact word alignments. Deterministic in `seed`.
pub fn gen_toy_corpus<T: Scalar>(
    num_speakers: usize,
    utts_per_speaker: usize,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Vec<Utterance<T>>> {
    if num_speakers == 0 || utts_per_speaker == 0 {
        return Err(Error::Data("toy corpus needs at least one speaker and utterance".into()));
    }
    let words = lexicon(vocab);
    if words.is_empty() {
        return Err(Error::Data("vocabulary has no usable lexicon characters".into()));
    }
    let mut out = Vec::with_capacity(num_speakers * utts_per_speaker);
    for speaker in 0..num_speakers {
        let f0 = BASE_F0_HZ + F0_STEP_HZ * speaker as f64;
        for utt in 0..utts_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((speaker * utts_per_speaker + utt) as u64);
            let num_words = rng.gen_range(WORDS_PER_UTT);
            let mut samples: Vec<T> = Vec::new();
            let mut transcript: Vec<&str> = Vec::new();
            let mut alignments = Vec::new();
            for w in 0..num_words {
                let word_index = rng.gen_range(0..words.len());
                samples.extend(word_samples::<T>(f0, word_index));
                transcript.push(&words[word_index]);
                let start = w as f64 * TOY_WORD_S;
                alignments.push((words[word_index].clone(), start, start + TOY_WORD_S));
            }
            out.push(Utterance {
                id: format!("spk{speaker}-utt{utt}"),
                audio: AudioClip::new(samples, SAMPLE_RATE_HZ)?,
                speaker_id: format!("spk{speaker}"),
                transcript: transcript.join(" "),
                word_alignments: alignments,
            });
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    id: String,
    audio_path: String,
    speaker_id: String,
    transcript: String,
    alignments: Vec<(String, f64, f64)>,
}

/// Writes WAVs into `dir/wav/` and a JSON-lines manifest at
/// `dir/corpus.jsonl`; returns the manifest path.
pub fn save_corpus<T: Scalar>(utterances: &[Utterance<T>], dir: &Path) -> Result<std::path::PathBuf> {
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let manifest_path = dir.join("corpus.jsonl");
    let mut out = BufWriter::new(std::fs::File::create(&manifest_path)?);
    for u in utterances {
        let audio_path = format!("wav/{}.wav", u.id);
        write_wav(&wav_dir.join(format!("{}.wav", u.id)), &u.audio)?;
        let line = CorpusLine {
            id: u.id.clone(),
            audio_path,
            speaker_id: u.speaker_id.clone(),
            transcript: u.transcript.clone(),
            alignments: u.word_alignments.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(manifest_path)
}

/// Reads a corpus manifest written by [`save_corpus`]; audio paths resolve
/// relative to the manifest's directory.
pub fn load_corpus<T: Scalar>(manifest_path: &Path) -> Result<Vec<Utterance<T>>> {
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let file = std::fs::File::open(manifest_path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", manifest_path.display(), lineno + 1))
        })?;
        out.push(Utterance {
            id: parsed.id,
            audio: load_wav(&base.join(&parsed.audio_path))?,
            speaker_id: parsed.speaker_id,
            transcript: parsed.transcript,
            word_alignments: parsed.alignments,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::default_desk()
    }

    #[test]
    fn corpus_has_requested_shape_and_exact_alignments() {
        let utts = gen_toy_corpus::<f64>(2, 4, &vocab(), 7).unwrap();
        assert_eq!(utts.len(), 8);
        for u in &utts {
            let words: Vec<&str> = u.transcript.split(' ').collect();
            assert_eq!(words.len(), u.word_alignments.len());
            for (i, (word, start, end)) in u.word_alignments.iter().enumerate() {
                assert_eq!(word, words[i]);
                assert!((start - i as f64 * TOY_WORD_S).abs() < 1e-12);
                assert!((end - (i + 1) as f64 * TOY_WORD_S).abs() < 1e-12);
            }
            let expected_dur = words.len() as f64 * TOY_WORD_S;
            assert!((u.duration_s() - expected_dur).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_regenerates_identical_corpus() {
        let a = gen_toy_corpus::<f64>(3, 2, &vocab(), 42).unwrap();
        let b = gen_toy_corpus::<f64>(3, 2, &vocab(), 42).unwrap();
        assert_eq!(a, b);
        let c = gen_toy_corpus::<f64>(3, 2, &vocab(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn speakers_occupy_distinct_frequency_bands() {
        // Zero crossings per second approximate 2x the fundamental.
        let utts = gen_toy_corpus::<f64>(2, 1, &vocab(), 1).unwrap();
        let rate = |u: &Utterance<f64>| {
            let s = u.audio.samples();
            let crossings = s.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count();
            crossings as f64 / u.duration_s()
        };
        let r0 = rate(&utts[0]);
        let r1 = rate(&utts[1]);
        // Speaker 1's band sits 70 Hz above speaker 0's 110 Hz; even with
        // per-word semitone shifts the bands cannot meet.
        assert!(r0 < r1, "speaker 0 at {r0} crossings/s, speaker 1 at {r1}");
        assert!(r1 - r0 > 60.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let utts = gen_toy_corpus::<f64>(2, 2, &vocab(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_corpus(&utts, dir.path()).unwrap();
        let loaded = load_corpus::<f64>(&manifest).unwrap();
        assert_eq!(loaded.len(), utts.len());
        for (a, b) in utts.iter().zip(&loaded) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.speaker_id, b.speaker_id);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.word_alignments, b.word_alignments);
            assert_eq!(a.audio.len(), b.audio.len());
            // 16-bit quantization bounds the audio round-trip error.
            for (x, y) in a.audio.samples().iter().zip(b.audio.samples()) {
                assert!((x - y).abs() < 1.0 / 16384.0);
            }
        }
    }
}
