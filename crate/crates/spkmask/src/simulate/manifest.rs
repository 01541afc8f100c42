//! Training-set assembly and on-disk formats: the JSON-lines mixture
//! manifest, per-mixture run-length-encoded mask files, and the WAVs.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{build_label, LabelScheme, Vocabulary};
use crate::signal::{write_wav, AudioClip, MaskVector};
use crate::simulate::{
    make_case1, make_case2, make_original, CaseKind, MixtureExample, RatioSpec, Utterance,
};
use crate::Scalar;

/// Gap kept between a sandwich layout's two outer utterances so the first
/// speaker's activity always splits into two runs.
const CASE2_GAP_S: f64 = 0.25;

/// How a training set is assembled. Same plan + same corpus = byte-identical
/// manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub ratio: RatioSpec,
    pub sir_db: f64,
    /// Overlaps are drawn uniformly from this range, clamped to what the
    /// drawn clips can accommodate.
    pub overlap_range_s: (f64, f64),
    pub vad_threshold_db: f64,
    pub seed: u64,
}

impl Default for MixturePlan {
    fn default() -> Self {
        Self {
            ratio: RatioSpec::default(),
            sir_db: 0.0,
            overlap_range_s: (0.0, 5.0),
            vad_threshold_db: crate::simulate::DEFAULT_VAD_THRESHOLD_DB,
            seed: 0,
        }
    }
}

/// One placed source as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSource {
    pub utt_id: String,
    pub speaker_id: String,
    pub offset_s: f64,
    pub gain: f64,
}

/// One mixture as recorded in the manifest. `reference` carries the scoring
/// truth (per-source transcripts and spans in mixture time); `labels` holds
/// the ready-to-train token sequences for every scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: String,
    pub case_kind: CaseKind,
    pub duration_s: f64,
    pub num_frames: usize,
    /// Largest absolute sample value of the raw mixture.
    pub peak: f64,
    /// Factor applied before writing the WAV (1/peak when peak > 1, else 1),
    /// so the file never clips; divide samples by it to recover the mixture.
    pub wav_gain: f64,
    pub sources: Vec<ManifestSource>,
    pub masks_path: String,
    pub reference: Vec<crate::labels::Utterance>,
    pub labels: BTreeMap<String, Vec<u32>>,
    pub alignment_fallback: bool,
}

/// Builds the full example list for a plan: `weight x corpus size` examples
/// per part, originals first, then tail-head overlaps, then sandwiches.
/// Each simulated example draws its partners and overlaps from its own RNG
/// stream, so the output is a pure function of (corpus, plan).
pub fn build_training_set<T: Scalar>(
    corpus: &[Utterance<T>],
    plan: &MixturePlan,
) -> Result<Vec<MixtureExample<T>>> {
    let speakers: Vec<&str> = {
        let mut s: Vec<&str> = corpus.iter().map(|u| u.speaker_id.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    if plan.ratio.total() == 0 {
        return Err(Error::Data("ratio has no nonzero parts".into()));
    }
    if (plan.ratio.case1 > 0 || plan.ratio.case2 > 0) && speakers.len() < 2 {
        return Err(Error::Data(format!(
            "overlap simulation needs at least 2 speakers, corpus has {}",
            speakers.len()
        )));
    }
    let (lo, hi) = plan.overlap_range_s;
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
        return Err(Error::Data(format!("bad overlap range [{lo}, {hi}]")));
    }
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }

    let n = corpus.len();
    let mut out = Vec::new();
    let mut stream = 0u64;
    let rng_for = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(stream);
        rng
    };

    for round in 0..plan.ratio.original {
        for (i, u) in corpus.iter().enumerate() {
            let mut ex = make_original(u, plan.vad_threshold_db)?;
            ex.id = format!("original-{:05}-{}", round as usize * n + i, u.id);
            out.push(ex);
        }
    }

    let others = |speaker: &str| -> Vec<usize> {
        (0..n).filter(|&i| corpus[i].speaker_id != speaker).collect()
    };
    let draw_overlap = |rng: &mut ChaCha8Rng, cap: f64| -> f64 {
        let hi = hi.min(cap).max(lo.min(cap));
        let lo = lo.min(cap);
        if hi <= lo {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };

    for round in 0..plan.ratio.case1 {
        for i in 0..n {
            let mut rng = rng_for(stream);
            stream += 1;
            let a = &corpus[i];
            let pool = others(&a.speaker_id);
            let b = &corpus[pool[rng.gen_range(0..pool.len())]];
            let overlap = draw_overlap(&mut rng, a.duration_s().min(b.duration_s()));
            let mut ex = make_case1(a, b, overlap, plan.sir_db, plan.vad_threshold_db)?;
            ex.id = format!("case1-{:05}-{}+{}", round as usize * n + i, a.id, b.id);
            out.push(ex);
        }
    }

    for round in 0..plan.ratio.case2 {
        for i in 0..n {
            let mut rng = rng_for(stream);
            stream += 1;
            let a1 = &corpus[i];
            // Second utterance of the same speaker; a1 itself only when the
            // speaker has nothing else.
            let mut same: Vec<usize> = (0..n)
                .filter(|&j| j != i && corpus[j].speaker_id == a1.speaker_id)
                .collect();
            if same.is_empty() {
                same.push(i);
            }
            let a2 = &corpus[same[rng.gen_range(0..same.len())]];
            let pool = others(&a1.speaker_id);
            let b = &corpus[pool[rng.gen_range(0..pool.len())]];
            let (d1, db, d2) = (a1.duration_s(), b.duration_s(), a2.duration_s());
            // Keep a gap inside the middle clip so the outer pair stays
            // disjoint in time.
            let o1 = draw_overlap(&mut rng, d1.min(db - CASE2_GAP_S).max(0.0));
            let o2 = draw_overlap(&mut rng, d2.min(db - CASE2_GAP_S - o1).max(0.0));
            let mut ex =
                make_case2(a1, b, a2, o1, o2, plan.sir_db, plan.vad_threshold_db)?;
            ex.id = format!("case2-{:05}-{}+{}+{}", round as usize * n + i, a1.id, b.id, a2.id);
            out.push(ex);
        }
    }
    Ok(out)
}

/// Writes WAVs (`wav/`), RLE masks (`masks/`), and the manifest
/// (`mixtures.jsonl`) under `dir`; returns the manifest path. WAVs that
/// would clip are scaled down by the recorded `wav_gain`.
pub fn write_training_set<T: Scalar>(
    examples: &[MixtureExample<T>],
    dir: &Path,
    vocab: &Vocabulary,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("wav"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let manifest_path = dir.join("mixtures.jsonl");
    let mut out = BufWriter::new(std::fs::File::create(&manifest_path)?);
    for ex in examples {
        let entry = persist_example(ex, dir, vocab)?;
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(manifest_path)
}

fn persist_example<T: Scalar>(
    ex: &MixtureExample<T>,
    dir: &Path,
    vocab: &Vocabulary,
) -> Result<ManifestEntry> {
    let audio_path = format!("wav/{}.wav", ex.id);
    let wav_gain = if ex.peak > 1.0 { 1.0 / ex.peak } else { 1.0 };
    if wav_gain == 1.0 {
        write_wav(&dir.join(&audio_path), &ex.mixture)?;
    } else {
        let scaled: Vec<T> = ex
            .mixture
            .samples()
            .iter()
            .map(|&s| s * T::from_f(wav_gain))
            .collect();
        let clip = AudioClip::new(scaled, ex.mixture.sample_rate_hz())?;
        write_wav(&dir.join(&audio_path), &clip)?;
    }

    let masks_path = format!("masks/{}.json", ex.id);
    save_masks(&dir.join(&masks_path), &ex.speaker_masks)?;

    let reference = ex.reference();
    let mut labels = BTreeMap::new();
    for scheme in LabelScheme::ALL {
        let label = build_label(&reference, scheme, vocab)?;
        labels.insert(scheme.name().to_string(), label.tokens);
    }

    Ok(ManifestEntry {
        id: ex.id.clone(),
        audio_path,
        case_kind: ex.case_kind,
        duration_s: ex.mixture.duration_s(),
        num_frames: ex.mixture.num_mask_frames(),
        peak: ex.peak,
        wav_gain,
        sources: ex
            .sources
            .iter()
            .map(|s| ManifestSource {
                utt_id: s.utterance.id.clone(),
                speaker_id: s.utterance.speaker_id.clone(),
                offset_s: s.offset_s,
                gain: s.gain.to_f(),
            })
            .collect(),
        masks_path,
        reference,
        labels,
        alignment_fallback: ex.alignment_fallback,
    })
}

/// Reads a manifest written by [`write_training_set`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    num_frames: usize,
    /// speaker -> list of (start frame, run length) for the 1-runs.
    speakers: BTreeMap<String, Vec<(usize, usize)>>,
}

/// Writes binary masks as runs of active frames.
pub fn save_masks<T: Scalar>(
    path: &Path,
    masks: &BTreeMap<String, MaskVector<T>>,
) -> Result<()> {
    let num_frames = masks.values().map(|m| m.len()).max().unwrap_or(0);
    let speakers = masks
        .iter()
        .map(|(speaker, mask)| (speaker.clone(), mask.runs()))
        .collect();
    let file = MaskFile { num_frames, speakers };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Reads a mask file written by [`save_masks`].
pub fn load_masks<T: Scalar>(path: &Path) -> Result<BTreeMap<String, MaskVector<T>>> {
    let text = std::fs::read_to_string(path)?;
    let file: MaskFile = serde_json::from_str(&text)?;
    let mut out = BTreeMap::new();
    for (speaker, runs) in file.speakers {
        let mut values = vec![T::zero(); file.num_frames];
        for (start, len) in runs {
            if start + len > file.num_frames {
                return Err(Error::Data(format!(
                    "{}: run {start}+{len} exceeds {} frames",
                    path.display(),
                    file.num_frames
                )));
            }
            for v in &mut values[start..start + len] {
                *v = T::one();
            }
        }
        out.insert(speaker, MaskVector::binary(values)?);
    }
    Ok(out)
}
