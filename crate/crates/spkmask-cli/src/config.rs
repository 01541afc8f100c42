//! The run configuration file: one TOML document covering vocabulary,
//! corpus, simulation, model, training, decoding, scoring, and artifact
//! paths. Every field has a default, so an empty file (or none at all) is a
//! valid configuration; unknown keys are rejected rather than ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spkmask::decode::DiarizationMode;
use spkmask::error::{Error, Result};
use spkmask::labels::{LabelScheme, Vocabulary};
use spkmask::metrics::ScoringConfig;
use spkmask::model::{MaskVariant, ModelConfig};
use spkmask::simulate::{MixturePlan, RatioSpec, DEFAULT_VAD_THRESHOLD_DB};
use spkmask::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vocab: VocabSection,
    pub corpus: CorpusSection,
    pub simulate: SimulateSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub scoring: ScoringSection,
    pub paths: PathsSection,
}

/// Token inventory. Characters double as the toy lexicon (each becomes the
/// word "cc"), so the default covers ten toy words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    /// Transcript characters, space included.
    pub chars: String,
    /// Highest speaker index a label may name.
    pub max_speakers: usize,
    /// Highest encodable timestamp; mixtures must not outlast it.
    pub max_timestamp_s: f64,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { chars: " abcdefghij".into(), max_speakers: 4, max_timestamp_s: 12.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { num_speakers: 2, utts_per_speaker: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// original : case1 : case2 mixture counts per corpus pass.
    pub ratio: [u32; 3],
    pub sir_db: f64,
    /// Overlaps are drawn uniformly from this range...
    pub overlap_range_s: [f64; 2],
    /// ...unless this pins them (evaluation-set style). Mixtures whose clips
    /// cannot realize the pinned value exactly are skipped with a logged
    /// reason.
    pub overlap_s: Option<f64>,
    pub vad_threshold_db: f64,
    pub seed: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            ratio: [1, 1, 1],
            sir_db: 0.0,
            overlap_range_s: [0.1, 0.6],
            overlap_s: None,
            vad_threshold_db: DEFAULT_VAD_THRESHOLD_DB,
            seed: 1,
        }
    }
}

impl SimulateSection {
    pub fn plan(&self) -> MixturePlan {
        let range = match self.overlap_s {
            Some(o) => (o, o),
            None => (self.overlap_range_s[0], self.overlap_range_s[1]),
        };
        MixturePlan {
            ratio: RatioSpec {
                original: self.ratio[0],
                case1: self.ratio[1],
                case2: self.ratio[2],
            },
            sir_db: self.sir_db,
            overlap_range_s: range,
            vad_threshold_db: self.vad_threshold_db,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub num_encoder_blocks: usize,
    pub num_decoder_blocks: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_mels: usize,
    /// Frame budget: mask vectors and encoder states cover exactly this many
    /// 20 ms frames.
    pub max_frames: usize,
    pub mask_variant: MaskVariant,
    pub dropout_mask_cnn: f64,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(0);
        Self {
            num_encoder_blocks: d.num_encoder_blocks,
            num_decoder_blocks: d.num_decoder_blocks,
            hidden_dim: d.hidden_dim,
            num_heads: d.num_heads,
            num_mels: d.num_mels,
            max_frames: d.max_frames,
            mask_variant: d.mask_variant,
            dropout_mask_cnn: d.dropout_mask_cnn,
            init_seed: 2,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_encoder_blocks: self.num_encoder_blocks,
            num_decoder_blocks: self.num_decoder_blocks,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            num_mels: self.num_mels,
            max_frames: self.max_frames,
            vocab_size,
            mask_variant: self.mask_variant,
            dropout_mask_cnn: self.dropout_mask_cnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub scheme: LabelScheme,
    pub lambda: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    /// 0 means one epoch of steps.
    pub restart_period_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            scheme: d.scheme,
            lambda: d.lambda,
            lr_init: d.lr_init,
            lr_min: d.lr_min,
            restart_period_steps: d.restart_period_steps,
            epochs: d.epochs,
            batch_size: d.batch_size,
            seed: 3,
            deterministic: d.deterministic,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            scheme: self.scheme,
            lambda: self.lambda,
            lr_init: self.lr_init,
            lr_min: self.lr_min,
            restart_period_steps: self.restart_period_steps,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            deterministic: self.deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    /// Hard cap on emitted tokens per utterance.
    pub max_len: usize,
    /// How hypotheses turn into diarization segments.
    pub diarization: DiarizationMode,
    /// Mask-mode segments shorter than this are dropped.
    pub min_dur_s: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self { max_len: 128, diarization: DiarizationMode::Mask, min_dur_s: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub collar_s: f64,
    pub oracle_resolution_s: f64,
}

impl Default for ScoringSection {
    fn default() -> Self {
        let d = ScoringConfig::default();
        Self { collar_s: d.collar_s, oracle_resolution_s: d.oracle_resolution_s }
    }
}

impl ScoringSection {
    pub fn scoring_config(&self) -> ScoringConfig {
        ScoringConfig { collar_s: self.collar_s, oracle_resolution_s: self.oracle_resolution_s }
    }
}

/// Where artifacts live. Inputs of one stage are outputs of the previous,
/// so a whole experiment runs out of a single `work/` tree by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus_dir: PathBuf,
    pub mixtures_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub hypotheses: PathBuf,
    pub rttm_dir: PathBuf,
    pub report: PathBuf,
    /// When set, scoring writes per-utterance mask/reference SVGs here.
    pub plots_dir: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            corpus_dir: "work/corpus".into(),
            mixtures_dir: "work/mixtures".into(),
            checkpoint: "work/model.json".into(),
            metrics: "work/metrics.jsonl".into(),
            hypotheses: "work/hypotheses.jsonl".into(),
            rttm_dir: "work/rttm".into(),
            report: "work/report.json".into(),
            plots_dir: None,
        }
    }
}

impl PathsSection {
    pub fn corpus_manifest(&self) -> PathBuf {
        self.corpus_dir.join("corpus.jsonl")
    }

    pub fn mixture_manifest(&self) -> PathBuf {
        self.mixtures_dir.join("mixtures.jsonl")
    }
}

impl RunConfig {
    /// Defaults when `path` is None; otherwise the parsed file. Parse and
    /// validation problems both surface as configuration errors.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        self.vocabulary()?;
        if self.corpus.num_speakers == 0 || self.corpus.utts_per_speaker == 0 {
            return Err(Error::Config("corpus needs at least one speaker and utterance".into()));
        }
        let [lo, hi] = self.simulate.overlap_range_s;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(Error::Config(format!("bad overlap range [{lo}, {hi}]")));
        }
        if let Some(o) = self.simulate.overlap_s {
            if !(o.is_finite() && o >= 0.0) {
                return Err(Error::Config(format!("bad fixed overlap {o}")));
            }
        }
        self.model.model_config(self.vocabulary()?.size()).validate().map_err(config_err)?;
        self.train.train_config().validate().map_err(config_err)?;
        self.scoring.scoring_config().validate().map_err(config_err)?;
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(&self.vocab.chars, self.vocab.max_speakers, self.vocab.max_timestamp_s)
    }

    /// The one-flag-for-everything reproducibility override.
    pub fn override_seeds(&mut self, seed: u64) {
        self.corpus.seed = seed;
        self.simulate.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
    }
}

/// Any error raised while validating file-borne settings is a config error,
/// whatever module it came from.
fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
