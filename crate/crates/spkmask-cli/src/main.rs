//! Pipeline driver: `toy-corpus` makes synthetic single-speaker audio,
//! `simulate` mixes it into overlapped multi-talker training sets, `train`
//! fits the speaker-mask transformer, `decode` produces hypotheses and RTTM,
//! and `score` compares them against the manifest truth.
//!
//! All knobs live in one TOML file (see [`config::RunConfig`]); flags
//! override file values, which override built-in defaults. Log level comes
//! from `RUST_LOG` only.
//!
//! Exit codes: 0 success; 1 usage or configuration problem; 2 bad or missing
//! data; 3 internal failure (model/training state).

mod config;
mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use spkmask::decode::{
    decode_hypothesis, format_rttm, hypothesis_to_diarization, load_hypotheses, parse_rttm,
    save_hypotheses, DecodedUtterance, DiarizationAnnotation, DiarizationMode, DiarizationSource,
    Hypothesis,
};
use spkmask::error::{Error, Result};
use spkmask::labels::LabelScheme;
use spkmask::metrics::{build_report, cp_wer, der, speaker_count_correct, UtteranceScore};
use spkmask::model::{MaskVariant, Model};
use spkmask::simulate::{
    build_training_set, gen_toy_corpus, load_corpus, load_masks, read_manifest, save_corpus,
    write_training_set, CaseKind, ManifestEntry, MixtureExample,
};
use spkmask::train::{load_training_set, save_metrics, train_run};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "spkmask", version, about = "Overlapped-speech recognition and diarization lab")]
struct Cli {
    /// TOML run configuration; omitted sections fall back to defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override every stage seed (corpus, simulation, init, training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone-burst corpus.
    ToyCorpus(ToyCorpusArgs),
    /// Mix a corpus into overlapped training/eval sets.
    Simulate(SimulateArgs),
    /// Train a model on a mixture manifest.
    Train(TrainArgs),
    /// Decode a mixture manifest into hypotheses and RTTM.
    Decode(DecodeArgs),
    /// Score hypotheses and RTTM against the manifest truth.
    Score(ScoreArgs),
}

#[derive(Args)]
struct ToyCorpusArgs {
    /// Where the corpus manifest and WAVs go.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    num_speakers: Option<usize>,
    #[arg(long)]
    utts_per_speaker: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Corpus manifest produced by toy-corpus.
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Where mixtures.jsonl, WAVs, and masks go.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Pin every overlap to this many seconds (evaluation-set style);
    /// mixtures that cannot realize it exactly are skipped.
    #[arg(long, value_name = "SECONDS")]
    overlap: Option<f64>,
    /// original:case1:case2 counts per corpus pass, e.g. 1:1:1.
    #[arg(long, value_name = "A:B:C")]
    ratio: Option<String>,
    /// Signal-to-interference ratio applied to each interfering clip.
    #[arg(long, value_name = "DB")]
    sir_db: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Mixture manifest to train on.
    #[arg(long, value_name = "FILE")]
    mixtures: Option<PathBuf>,
    /// Where the trained checkpoint JSON goes.
    #[arg(long, value_name = "FILE")]
    checkpoint_out: Option<PathBuf>,
    /// Where the per-step loss/lr JSONL goes.
    #[arg(long, value_name = "FILE")]
    metrics_out: Option<PathBuf>,
    /// Mask-loss weight in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Label scheme: spk-ts-1, spk-ts-2, or spk.
    #[arg(long)]
    scheme: Option<String>,
    /// Mask branch: l-fc, l-fc-cnn, ca-fc, or ca-fc-cnn.
    #[arg(long)]
    mask_variant: Option<String>,
    /// Passes over the training set.
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate at the start of each cosine restart.
    #[arg(long)]
    lr_init: Option<f64>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Mixture manifest to decode.
    #[arg(long, value_name = "FILE")]
    mixtures: Option<PathBuf>,
    /// Trained checkpoint JSON.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Where the hypothesis JSONL goes.
    #[arg(long, value_name = "FILE")]
    hypotheses_out: Option<PathBuf>,
    /// Where per-utterance RTTM files go.
    #[arg(long, value_name = "DIR")]
    rttm_dir: Option<PathBuf>,
    /// Label scheme the hypotheses are parsed under.
    #[arg(long)]
    scheme: Option<String>,
    /// Diarization source: mask or timestamps.
    #[arg(long)]
    diarization: Option<String>,
    /// Longest token sequence the decoder may emit.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Mixture manifest carrying the reference truth.
    #[arg(long, value_name = "FILE")]
    mixtures: Option<PathBuf>,
    /// Hypothesis JSONL written by decode.
    #[arg(long, value_name = "FILE")]
    hypotheses: Option<PathBuf>,
    /// RTTM directory written by decode.
    #[arg(long, value_name = "DIR")]
    rttm_dir: Option<PathBuf>,
    /// Where the JSON score report goes.
    #[arg(long, value_name = "FILE")]
    report_out: Option<PathBuf>,
    /// Write per-utterance mask SVGs here.
    #[arg(long, value_name = "DIR")]
    plots_dir: Option<PathBuf>,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Io(_)
        | Error::Wav(_)
        | Error::Audio(_)
        | Error::Data(_)
        | Error::Label(_)
        | Error::Score(_)
        | Error::Json(_) => 2,
        Error::Model(_) | Error::Train(_) => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.override_seeds(seed);
    }
    match cli.command {
        Command::ToyCorpus(args) => cmd_toy_corpus(config, args),
        Command::Simulate(args) => cmd_simulate(config, args),
        Command::Train(args) => cmd_train(config, args),
        Command::Decode(args) => cmd_decode(config, args),
        Command::Score(args) => cmd_score(config, args),
    }
}

fn cmd_toy_corpus(mut config: RunConfig, args: ToyCorpusArgs) -> Result<()> {
    if let Some(n) = args.num_speakers {
        config.corpus.num_speakers = n;
    }
    if let Some(n) = args.utts_per_speaker {
        config.corpus.utts_per_speaker = n;
    }
    config.validate()?;
    let out_dir = args.out_dir.unwrap_or_else(|| config.paths.corpus_dir.clone());
    let vocab = config.vocabulary()?;
    let corpus = gen_toy_corpus::<f64>(
        config.corpus.num_speakers,
        config.corpus.utts_per_speaker,
        &vocab,
        config.corpus.seed,
    )?;
    let manifest = save_corpus(&corpus, &out_dir)?;
    println!("wrote {} utterances to {}", corpus.len(), manifest.display());
    Ok(())
}

fn cmd_simulate(mut config: RunConfig, args: SimulateArgs) -> Result<()> {
    if let Some(ratio) = &args.ratio {
        config.simulate.ratio = parse_ratio(ratio)?;
    }
    if let Some(o) = args.overlap {
        config.simulate.overlap_s = Some(o);
    }
    if let Some(db) = args.sir_db {
        config.simulate.sir_db = db;
    }
    config.validate()?;
    let corpus_manifest = args.corpus.unwrap_or_else(|| config.paths.corpus_manifest());
    let out_dir = args.out_dir.unwrap_or_else(|| config.paths.mixtures_dir.clone());
    let vocab = config.vocabulary()?;

    let corpus = load_corpus::<f64>(&corpus_manifest)?;
    let mut examples = build_training_set(&corpus, &config.simulate.plan())?;
    if let Some(requested) = config.simulate.overlap_s {
        examples.retain(|ex| {
            let ok = achieved_overlaps(ex).iter().all(|o| (o - requested).abs() < 1e-9);
            if !ok {
                log::warn!(
                    "skipping {}: clips too short to realize a {requested} s overlap",
                    ex.id
                );
            }
            ok
        });
    }
    let manifest = write_training_set(&examples, &out_dir, &vocab)?;
    let count = |k: CaseKind| examples.iter().filter(|e| e.case_kind == k).count();
    println!(
        "wrote {} mixtures ({} original, {} tail-head, {} sandwich) to {}",
        examples.len(),
        count(CaseKind::Original),
        count(CaseKind::Case1),
        count(CaseKind::Case2),
        manifest.display()
    );
    Ok(())
}

/// The overlap durations a mixture actually realized, from its source
/// placements: end of each earlier clip minus start of the next.
fn achieved_overlaps<T: spkmask::Scalar>(ex: &MixtureExample<T>) -> Vec<f64> {
    ex.sources
        .windows(2)
        .map(|w| w[0].offset_s + w[0].utterance.duration_s() - w[1].offset_s)
        .collect()
}

fn cmd_train(mut config: RunConfig, args: TrainArgs) -> Result<()> {
    if let Some(l) = args.lambda {
        config.train.lambda = l;
    }
    if let Some(s) = &args.scheme {
        config.train.scheme = LabelScheme::from_str(s)?;
    }
    if let Some(v) = &args.mask_variant {
        config.model.mask_variant = MaskVariant::from_str(v)?;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(lr) = args.lr_init {
        config.train.lr_init = lr;
    }
    config.validate()?;
    let manifest = args.mixtures.unwrap_or_else(|| config.paths.mixture_manifest());
    let checkpoint_path = args.checkpoint_out.unwrap_or_else(|| config.paths.checkpoint.clone());
    let metrics_path = args.metrics_out.unwrap_or_else(|| config.paths.metrics.clone());

    let vocab = config.vocabulary()?;
    let model_config = config.model.model_config(vocab.size());
    let train_config = config.train.train_config();
    let examples =
        load_training_set::<f64>(&manifest, train_config.scheme, &vocab, &model_config)?;
    let mut model = Model::new(model_config, config.model.init_seed)?;
    let metrics = train_run(&mut model, &examples, &vocab, &train_config)?;

    ensure_parent(&checkpoint_path)?;
    model.save(&checkpoint_path)?;
    ensure_parent(&metrics_path)?;
    save_metrics(&metrics_path, &metrics)?;
    let last = metrics.last().expect("train_run rejects empty runs");
    println!(
        "trained {} steps on {} examples; final loss {:.4} (asr {:.4}, mask {:.4})",
        metrics.len(),
        examples.len(),
        last.combined,
        last.asr_loss,
        last.mask_loss
    );
    println!("checkpoint: {}", checkpoint_path.display());
    Ok(())
}

fn cmd_decode(mut config: RunConfig, args: DecodeArgs) -> Result<()> {
    if let Some(s) = &args.scheme {
        config.train.scheme = LabelScheme::from_str(s)?;
    }
    if let Some(d) = &args.diarization {
        config.decode.diarization = parse_diarization(d)?;
    }
    if let Some(m) = args.max_len {
        config.decode.max_len = m;
    }
    config.validate()?;
    let scheme = config.train.scheme;
    let mode = config.decode.diarization;
    if mode == DiarizationMode::Timestamps && !scheme.uses_timestamps() {
        return Err(Error::Config(format!(
            "scheme {scheme} carries no timestamps; use mask diarization"
        )));
    }
    let manifest = args.mixtures.unwrap_or_else(|| config.paths.mixture_manifest());
    let checkpoint_path = args.checkpoint.unwrap_or_else(|| config.paths.checkpoint.clone());
    let hyp_path = args.hypotheses_out.unwrap_or_else(|| config.paths.hypotheses.clone());
    let rttm_dir = args.rttm_dir.unwrap_or_else(|| config.paths.rttm_dir.clone());

    let vocab = config.vocabulary()?;
    let model = Model::<f64>::load(&checkpoint_path)?;
    if model.config().vocab_size != vocab.size() {
        return Err(Error::Config(format!(
            "checkpoint was trained with a {}-token vocabulary but the config builds {}",
            model.config().vocab_size,
            vocab.size()
        )));
    }
    let examples = load_training_set::<f64>(&manifest, scheme, &vocab, model.config())?;
    fs::create_dir_all(&rttm_dir)?;
    let mut decoded = Vec::with_capacity(examples.len());
    for ex in &examples {
        let hypothesis =
            decode_hypothesis(&model, &ex.features, &vocab, scheme, config.decode.max_len)?;
        let annotation =
            hypothesis_to_diarization(&hypothesis, mode, config.decode.min_dur_s)?;
        fs::write(
            rttm_dir.join(format!("{}.rttm", ex.id)),
            format_rttm(&ex.id, &annotation),
        )?;
        decoded.push(DecodedUtterance { id: ex.id.clone(), hypothesis });
    }
    ensure_parent(&hyp_path)?;
    save_hypotheses(&hyp_path, &decoded)?;
    println!(
        "decoded {} utterances to {} (RTTM in {})",
        decoded.len(),
        hyp_path.display(),
        rttm_dir.display()
    );
    Ok(())
}

/// The report file: scores plus the experiment identity they belong to.
#[derive(serde::Serialize, serde::Deserialize)]
struct RunReport {
    lambda: f64,
    scheme: String,
    mask_variant: String,
    diarization: DiarizationMode,
    scores: spkmask::metrics::ScoreReport,
}

fn cmd_score(config: RunConfig, args: ScoreArgs) -> Result<()> {
    config.validate()?;
    let manifest_path = args.mixtures.unwrap_or_else(|| config.paths.mixture_manifest());
    let hyp_path = args.hypotheses.unwrap_or_else(|| config.paths.hypotheses.clone());
    let rttm_dir = args.rttm_dir.unwrap_or_else(|| config.paths.rttm_dir.clone());
    let report_path = args.report_out.unwrap_or_else(|| config.paths.report.clone());
    let plots_dir = args.plots_dir.or_else(|| config.paths.plots_dir.clone());

    let entries = read_manifest(&manifest_path)?;
    let manifest_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let decoded = load_hypotheses::<f64>(&hyp_path)?;
    let by_id: BTreeMap<&str, &Hypothesis<f64>> =
        decoded.iter().map(|d| (d.id.as_str(), &d.hypothesis)).collect();
    let scoring = config.scoring.scoring_config();

    if let Some(dir) = &plots_dir {
        fs::create_dir_all(dir)?;
    }
    let mut per_utterance = Vec::with_capacity(entries.len());
    for entry in &entries {
        let hypothesis = by_id.get(entry.id.as_str()).copied().ok_or_else(|| {
            Error::Data(format!("no hypothesis for {} in {}", entry.id, hyp_path.display()))
        })?;
        let masks = load_masks::<f64>(&manifest_dir.join(&entry.masks_path))?;
        let ref_annotation = annotation_from_masks(&masks)?;
        let hyp_annotation = annotation_from_rttm(&rttm_dir.join(format!("{}.rttm", entry.id)))?;

        let wer = cp_wer(&reference_streams(entry), &hypothesis_streams(hypothesis))?;
        let der = der(&ref_annotation, &hyp_annotation, &scoring)?;
        let ref_speakers = masks.len();
        let hyp_speakers = hypothesis_speaker_count(hypothesis);
        per_utterance.push(UtteranceScore {
            id: entry.id.clone(),
            wer,
            der,
            ref_speaker_count: ref_speakers,
            hyp_speaker_count: hyp_speakers,
            speaker_count_correct: speaker_count_correct(ref_speakers, hyp_speakers),
        });

        if let Some(dir) = &plots_dir {
            let svg = plot::mask_plot(&entry.id, &masks, &hypothesis.masks);
            fs::write(dir.join(format!("{}.svg", entry.id)), svg)?;
        }
    }

    let report = RunReport {
        lambda: config.train.lambda,
        scheme: config.train.scheme.to_string(),
        mask_variant: config.model.mask_variant.to_string(),
        diarization: config.decode.diarization,
        scores: build_report(per_utterance)?,
    };
    ensure_parent(&report_path)?;
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let corpus = &report.scores.corpus;
    println!(
        "scored {} utterances: WER {:.2}%, DER {:.2}%, SCA {:.1}%",
        corpus.num_utterances,
        corpus.wer.wer * 100.0,
        corpus.der.der * 100.0,
        corpus.sca_percent
    );
    println!("report: {}", report_path.display());
    Ok(())
}

/// Reference word streams keyed by speaker, words in temporal order.
fn reference_streams(entry: &ManifestEntry) -> BTreeMap<String, Vec<String>> {
    let mut spans: Vec<_> = entry.reference.iter().collect();
    spans.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut streams: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for span in spans {
        streams
            .entry(format!("ref{}", span.speaker))
            .or_default()
            .extend(span.text.split_whitespace().map(str::to_string));
    }
    streams
}

/// Hypothesis word streams keyed by emitted speaker index, block order.
fn hypothesis_streams(hyp: &Hypothesis<f64>) -> BTreeMap<String, Vec<String>> {
    let mut streams: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for block in &hyp.blocks {
        let Some(speaker) = block.speaker else { continue };
        streams
            .entry(format!("hyp{speaker}"))
            .or_default()
            .extend(block.text.split_whitespace().map(str::to_string));
    }
    streams
}

fn hypothesis_speaker_count(hyp: &Hypothesis<f64>) -> usize {
    let mut speakers: Vec<usize> = hyp.blocks.iter().filter_map(|b| b.speaker).collect();
    speakers.sort_unstable();
    speakers.dedup();
    speakers.len()
}

/// Ground-truth diarization from the stored binary masks.
fn annotation_from_masks(
    masks: &BTreeMap<String, spkmask::signal::MaskVector<f64>>,
) -> Result<DiarizationAnnotation> {
    let mut segments = Vec::new();
    for (speaker, mask) in masks {
        for (start_s, end_s) in spkmask::decode::mask_to_segments(mask, 0.5, 0.0) {
            segments.push(spkmask::decode::Segment { speaker: speaker.clone(), start_s, end_s });
        }
    }
    DiarizationAnnotation::new(segments, DiarizationSource::Mask)
}

fn annotation_from_rttm(path: &Path) -> Result<DiarizationAnnotation> {
    let text = fs::read_to_string(path)?;
    let by_speaker = parse_rttm(&text)?;
    DiarizationAnnotation::new(
        by_speaker.into_values().flatten().collect(),
        DiarizationSource::Timestamps,
    )
}

fn parse_ratio(text: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(Error::Config(format!("ratio {text:?} is not of the form A:B:C")));
    };
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|_| Error::Config(format!("ratio part {s:?} is not a count")))
    };
    Ok([parse(a)?, parse(b)?, parse(c)?])
}

fn parse_diarization(text: &str) -> Result<DiarizationMode> {
    match text {
        "mask" => Ok(DiarizationMode::Mask),
        "timestamps" => Ok(DiarizationMode::Timestamps),
        other => Err(Error::Config(format!(
            "unknown diarization mode {other:?} (expected mask or timestamps)"
        ))),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}
