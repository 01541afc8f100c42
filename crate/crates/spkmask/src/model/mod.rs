//! Encoder-decoder transformer with an auxiliary speaker-mask branch.
//!
//! The encoder reads log-mel features merged to the 20 ms mask grid; the
//! decoder is a standard causal transformer over label tokens. At decoder
//! positions whose *target* token is a speaker token, the mask branch turns
//! that position's final hidden state into a per-frame speaker-activity
//! probability vector, trained with binary cross-entropy against the
//! simulated masks. The combined objective blends the two losses:
//! `(1 - lambda) * asr + lambda * sum(mask)`.
//!
//! Forward passes build ops on a [`Graph`] via a [`ModelSession`], so the
//! same code path serves training (with gradients) and decoding.

mod layers;
mod params;

pub use params::Parameters;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Tensor};
use crate::labels::{TokenClass, Vocabulary};
use crate::signal::{FeatureMatrix, MaskVector};
use crate::Scalar;

use layers::{
    attention, decoder_block, dropout_mask, encoder_block, layer_norm, p, sinusoidal_positions,
};

const CHECKPOINT_VERSION: u32 = 1;

/// Where the mask branch taps the network and what it runs on the way out.
///
/// `L*` variants read the final decoder hidden state at the gated position
/// directly; `Ca*` variants first pass it through a dedicated cross-attention
/// block over the encoder states. `*Cnn` variants refine the frame logits
/// with a two-layer width-2 convolution stack before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskVariant {
    LFc,
    LFcCnn,
    CaFc,
    CaFcCnn,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 4] =
        [MaskVariant::LFc, MaskVariant::LFcCnn, MaskVariant::CaFc, MaskVariant::CaFcCnn];

    pub fn uses_cross_attention(self) -> bool {
        matches!(self, MaskVariant::CaFc | MaskVariant::CaFcCnn)
    }

    pub fn uses_cnn(self) -> bool {
        matches!(self, MaskVariant::LFcCnn | MaskVariant::CaFcCnn)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::LFc => "l-fc",
            MaskVariant::LFcCnn => "l-fc-cnn",
            MaskVariant::CaFc => "ca-fc",
            MaskVariant::CaFcCnn => "ca-fc-cnn",
        }
    }
}

impl fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mask variant {s:?}")))
    }
}

/// Architecture hyperparameters. `max_frames` is the fixed frame budget D:
/// encoder states, mask vectors, and mask targets are all exactly D frames
/// of 20 ms; feature inputs are padded or truncated to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_encoder_blocks: usize,
    pub num_decoder_blocks: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_mels: usize,
    pub max_frames: usize,
    pub vocab_size: usize,
    pub mask_variant: MaskVariant,
    pub dropout_mask_cnn: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 2+2 blocks, hidden 64, 4 heads, 16 mels, a
    /// 256-frame (~5.1 s) budget.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_encoder_blocks: 2,
            num_decoder_blocks: 2,
            hidden_dim: 64,
            num_heads: 4,
            num_mels: 16,
            max_frames: 256,
            vocab_size,
            mask_variant: MaskVariant::LFc,
            dropout_mask_cnn: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.num_encoder_blocks == 0 || self.num_decoder_blocks == 0 {
            return Err(Error::Config("need at least one block on each side".into()));
        }
        if self.num_mels == 0 || self.max_frames == 0 {
            return Err(Error::Config("num_mels and max_frames must be positive".into()));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room beyond pad/sot/eot",
                self.vocab_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_mask_cnn) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout_mask_cnn
            )));
        }
        Ok(())
    }
}

/// The three loss terms of one forward pass. `combined` is always
/// `(1 - lambda) * asr_loss + lambda * sum(mask_losses)`, computed from the
/// other fields, so the identity holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub asr_loss: f64,
    pub mask_losses: Vec<f64>,
    pub combined: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(asr_loss: f64, mask_losses: Vec<f64>, lambda: f64) -> Result<Self> {
        let combined = combined_loss(asr_loss, &mask_losses, lambda)?;
        Ok(Self { asr_loss, mask_losses, combined, lambda })
    }
}

/// `(1 - lambda) * asr + lambda * sum(mask_losses)`; rejects lambda outside
/// [0, 1]. An empty mask list contributes nothing.
pub fn combined_loss(asr: f64, mask_losses: &[f64], lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Model(format!("lambda {lambda} outside [0, 1]")));
    }
    let mask_sum: f64 = mask_losses.iter().sum();
    Ok((1.0 - lambda) * asr + lambda * mask_sum)
}

/// Mean binary cross-entropy between a predicted probability mask and a
/// binary target of the same length, with probabilities clamped to
/// [1e-7, 1 - 1e-7]. Matches the training-graph loss bit for bit.
pub fn mask_loss<T: Scalar>(prediction: &MaskVector<T>, target: &MaskVector<T>) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::Model(format!(
            "mask length mismatch: prediction {} vs target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::Model("mask loss of empty vectors".into()));
    }
    let mut g: Graph<T> = Graph::new();
    let pred = g.leaf(Tensor::from_vec(1, prediction.len(), prediction.values().to_vec()));
    let tgt = g.leaf(Tensor::from_vec(1, target.len(), target.values().to_vec()));
    let loss = g.bce(pred, tgt);
    Ok(g.value(loss).item().to_f())
}

/// Decoder positions whose *target* token (the next one in the label) is a
/// speaker token, paired with that token's 1-based speaker number. The mask
/// loss applies only at these positions; labels without speaker tokens gate
/// nothing.
pub fn gate_positions(label_tokens: &[u32], vocab: &Vocabulary) -> Vec<(usize, usize)> {
    let mut gates = Vec::new();
    for j in 0..label_tokens.len().saturating_sub(1) {
        if let Some(TokenClass::Speaker(k)) = vocab.classify(label_tokens[j + 1]) {
            gates.push((j, k));
        }
    }
    gates
}

/// Configuration plus trainable parameters. All forward math happens in a
/// [`ModelSession`] obtained from [`Model::session`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: Parameters<T>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with Xavier-initialized weights drawn deterministically
    /// from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = params::parameter_specs(&config);
        let params = Parameters::init(&specs, seed);
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        &mut self.params
    }

    /// Starts a forward pass: binds every parameter into a fresh graph.
    /// `training` only controls dropout in the mask-branch CNN.
    pub fn session(&self, training: bool) -> ModelSession<'_, T> {
        let mut graph = Graph::new();
        let ids = self
            .params
            .iter()
            .map(|(name, tensor)| (name.clone(), graph.param(tensor.clone())))
            .collect();
        ModelSession { model: self, graph, ids, training }
    }

    /// Eval-mode encoder states as a plain tensor (max_frames x hidden).
    pub fn encode(&self, features: &FeatureMatrix<T>) -> Result<Tensor<T>> {
        let mut session = self.session(false);
        let enc = session.encode(features)?;
        Ok(session.value(enc).clone())
    }

    /// Writes config and weights as a single JSON checkpoint; loading
    /// restores them bit for bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let params = self
            .params
            .iter()
            .map(|(name, t)| {
                (name.clone(), TensorEntry {
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                })
            })
            .collect();
        let file = Checkpoint { version: CHECKPOINT_VERSION, config: self.config.clone(), params };
        let out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ckpt: Checkpoint<T> = serde_json::from_reader(file)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Model(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        let specs = params::parameter_specs(&ckpt.config);
        if ckpt.params.len() != specs.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, config requires {}",
                ckpt.params.len(),
                specs.len()
            )));
        }
        let mut tensors = BTreeMap::new();
        for spec in &specs {
            let entry = ckpt.params.get(&spec.name).ok_or_else(|| {
                Error::Model(format!("checkpoint is missing parameter {}", spec.name))
            })?;
            if entry.rows != spec.rows
                || entry.cols != spec.cols
                || entry.data.len() != spec.rows * spec.cols
            {
                return Err(Error::Model(format!(
                    "checkpoint tensor {} has shape {}x{} ({} values), expected {}x{}",
                    spec.name,
                    entry.rows,
                    entry.cols,
                    entry.data.len(),
                    spec.rows,
                    spec.cols
                )));
            }
            if !entry.data.iter().all(|v| v.is_finite()) {
                return Err(Error::Model(format!(
                    "checkpoint tensor {} has non-finite values",
                    spec.name
                )));
            }
            tensors.insert(
                spec.name.clone(),
                Tensor::from_vec(entry.rows, entry.cols, entry.data.clone()),
            );
        }
        Ok(Self { config: ckpt.config, params: Parameters::from_map(tensors) })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Checkpoint<T: Scalar> {
    version: u32,
    config: ModelConfig,
    params: BTreeMap<String, TensorEntry<T>>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// One forward pass over one example: a graph with every parameter bound,
/// building ops on demand. Keep it around after [`ModelSession::backward`]
/// to read gradients by parameter name.
pub struct ModelSession<'m, T: Scalar> {
    model: &'m Model<T>,
    graph: Graph<T>,
    ids: BTreeMap<String, NodeId>,
    training: bool,
}

impl<'m, T: Scalar> ModelSession<'m, T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.graph.value(id)
    }

    pub fn graph_mut(&mut self) -> &mut Graph<T> {
        &mut self.graph
    }

    /// Gradient of the last `backward` root w.r.t. a named parameter; None
    /// until `backward` ran or when the parameter never entered the graph.
    pub fn gradient(&self, name: &str) -> Option<&Tensor<T>> {
        self.graph.grad(*self.ids.get(name)?)
    }

    pub fn backward(&mut self, root: NodeId) {
        self.graph.backward(root);
    }

    /// Encoder states (max_frames x hidden) for a feature matrix. Features
    /// are standardized per example, merged in adjacent-frame pairs from the
    /// 10 ms hop to the 20 ms grid, and padded or truncated to the frame
    /// budget.
    pub fn encode(&mut self, features: &FeatureMatrix<T>) -> Result<NodeId> {
        let cfg = &self.model.config;
        if features.num_mels() != cfg.num_mels {
            return Err(Error::Model(format!(
                "features have {} mels, model expects {}",
                features.num_mels(),
                cfg.num_mels
            )));
        }
        let d = cfg.max_frames;
        let m = cfg.num_mels;

        let n_values = features.num_frames() * m;
        let (mean, std) = if n_values == 0 {
            (0.0, 1.0)
        } else {
            let mean = features.data().iter().map(|v| v.to_f()).sum::<f64>() / n_values as f64;
            let var = features
                .data()
                .iter()
                .map(|v| {
                    let d = v.to_f() - mean;
                    d * d
                })
                .sum::<f64>()
                / n_values as f64;
            (mean, var.sqrt().max(1e-8))
        };

        // Row f of the encoder input is the standardized mel pair
        // (2f, 2f + 1); rows past the recording stay zero, i.e. at the mean.
        let mut merged = Tensor::zeros(d, 2 * m);
        for f in 0..d {
            for half in 0..2 {
                let mel_row = 2 * f + half;
                if mel_row >= features.num_frames() {
                    continue;
                }
                for (c, &v) in features.row(mel_row).iter().enumerate() {
                    merged.set(f, half * m + c, T::from_f((v.to_f() - mean) / std));
                }
            }
        }

        let g = &mut self.graph;
        let x = g.leaf(merged);
        let w = p(&self.ids, "enc.frontend.w");
        let b = p(&self.ids, "enc.frontend.b");
        let x = g.matmul(x, w);
        let x = g.add_row(x, b);
        let x = g.gelu(x);
        let pe = g.leaf(sinusoidal_positions(d, cfg.hidden_dim));
        let mut x = g.add(x, pe);
        for i in 0..cfg.num_encoder_blocks {
            x = encoder_block(g, &self.ids, &format!("enc.b{i}"), x, cfg.num_heads);
        }
        Ok(layer_norm(g, &self.ids, "enc.ln_out", x))
    }

    /// Teacher-forced decoder pass: returns (logits, hidden), both with one
    /// row per input token. `hidden` is the final-layer state that feeds
    /// the mask branch.
    pub fn decoder_forward(
        &mut self,
        encoder_states: NodeId,
        tokens: &[u32],
    ) -> Result<(NodeId, NodeId)> {
        let cfg = &self.model.config;
        if tokens.is_empty() {
            return Err(Error::Model("decoder needs at least one input token".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Model(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
        let indices: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let g = &mut self.graph;
        let embed = p(&self.ids, "dec.embed");
        let x = g.gather_rows(embed, &indices);
        let pe = g.leaf(sinusoidal_positions(tokens.len(), cfg.hidden_dim));
        let mut x = g.add(x, pe);
        for i in 0..cfg.num_decoder_blocks {
            x = decoder_block(g, &self.ids, &format!("dec.b{i}"), x, encoder_states, cfg.num_heads);
        }
        let hidden = layer_norm(g, &self.ids, "dec.ln_out", x);
        let w = p(&self.ids, "dec.proj.w");
        let b = p(&self.ids, "dec.proj.b");
        let logits = g.matmul(hidden, w);
        let logits = g.add_row(logits, b);
        Ok((logits, hidden))
    }

    /// Mean negative log-likelihood of the shifted targets under the logits,
    /// skipping PAD positions.
    pub fn asr_loss(&mut self, logits: NodeId, targets: &[u32], pad_id: u32) -> Result<NodeId> {
        if self.graph.value(logits).rows() != targets.len() {
            return Err(Error::Model(format!(
                "{} logit rows for {} targets",
                self.graph.value(logits).rows(),
                targets.len()
            )));
        }
        if targets.iter().all(|&t| t == pad_id) {
            return Err(Error::Model("every target position is PAD".into()));
        }
        let cols = self.graph.value(logits).cols();
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= cols) {
            return Err(Error::Model(format!("target id {bad} outside vocabulary of {cols}")));
        }
        let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        Ok(self.graph.cross_entropy(logits, &targets, pad_id as usize))
    }

    /// Frame-activity probabilities (1 x max_frames) for the speaker voiced
    /// at one gated decoder position. `rng` is consumed only by dropout,
    /// i.e. in training mode with a CNN variant.
    pub fn mask_branch(
        &mut self,
        decoder_hidden: NodeId,
        position: usize,
        encoder_states: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let cfg = &self.model.config;
        let rows = self.graph.value(decoder_hidden).rows();
        if position >= rows {
            return Err(Error::Model(format!(
                "gated position {position} outside {rows} decoder positions"
            )));
        }
        let g = &mut self.graph;
        let at_gate = g.gather_rows(decoder_hidden, &[position]);
        let feat = if cfg.mask_variant.uses_cross_attention() {
            let n = layer_norm(g, &self.ids, "mask.ca.ln", at_gate);
            let a = attention(g, &self.ids, "mask.ca", n, encoder_states, cfg.num_heads, false);
            g.add(at_gate, a)
        } else {
            at_gate
        };
        let w = p(&self.ids, "mask.fc.w");
        let b = p(&self.ids, "mask.fc.b");
        let fc = g.matmul(feat, w);
        let mut out = g.add_row(fc, b);
        if cfg.mask_variant.uses_cnn() {
            out = self.cnn_stack(out, rng);
        }
        Ok(self.graph.sigmoid(out))
    }

    /// Frame-logit refinement: reshape the 1 x D vector to a D x 1
    /// single-channel map, two width-2 convolutions (1 -> 32 -> 64 channels,
    /// end-padded to keep D rows), dropout in training, then a per-frame
    /// linear map back to one logit.
    fn cnn_stack(&mut self, fc: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
        let cfg = &self.model.config;
        let d = cfg.max_frames;
        let g = &mut self.graph;
        let col = g.reshape(fc, d, 1);
        let w1 = p(&self.ids, "mask.conv1.w");
        let b1 = p(&self.ids, "mask.conv1.b");
        let c1 = g.conv1d_k2(col, w1);
        let c1 = g.add_row(c1, b1);
        let w2 = p(&self.ids, "mask.conv2.w");
        let b2 = p(&self.ids, "mask.conv2.b");
        let c2 = g.conv1d_k2(c1, w2);
        let mut x = g.add_row(c2, b2);
        if self.training && cfg.dropout_mask_cnn > 0.0 {
            let channels = g.value(x).cols();
            let mask = g.leaf(dropout_mask(d, channels, cfg.dropout_mask_cnn, rng));
            x = g.mul(x, mask);
        }
        let wo = p(&self.ids, "mask.out.w");
        let bo = p(&self.ids, "mask.out.b");
        let out = g.matmul(x, wo);
        let out = g.add_row(out, bo);
        g.reshape(out, 1, d)
    }

    /// Wraps a 1 x D probability node into a [`MaskVector`].
    pub fn mask_probabilities(&self, node: NodeId) -> Result<MaskVector<T>> {
        let v = self.graph.value(node);
        if v.rows() != 1 {
            return Err(Error::Model(format!("mask node has {} rows, expected 1", v.rows())));
        }
        MaskVector::probability(v.data().to_vec())
    }

    /// Full training objective for one example. `label_tokens` is the
    /// complete label (SOT .. EOT); the decoder reads all but the last token
    /// and is scored against the sequence shifted by one. `gates` pairs
    /// decoder positions with their speaker's target mask, as produced by
    /// [`gate_positions`] plus speaker lookup.
    ///
    /// With `lambda == 0` the mask branch is skipped outright; with no gated
    /// positions the mask term is empty. Returns the scalar loss node and
    /// the numeric breakdown.
    pub fn example_loss(
        &mut self,
        features: &FeatureMatrix<T>,
        label_tokens: &[u32],
        pad_id: u32,
        gates: &[(usize, &MaskVector<T>)],
        lambda: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(NodeId, LossBreakdown)> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Model(format!("lambda {lambda} outside [0, 1]")));
        }
        if label_tokens.len() < 2 {
            return Err(Error::Model(format!(
                "label of {} tokens cannot be shifted into input and target",
                label_tokens.len()
            )));
        }
        let d = self.model.config.max_frames;
        let input = &label_tokens[..label_tokens.len() - 1];
        let targets = &label_tokens[1..];

        let enc = self.encode(features)?;
        let (logits, hidden) = self.decoder_forward(enc, input)?;
        let asr = self.asr_loss(logits, targets, pad_id)?;
        let asr_value = self.graph.value(asr).item().to_f();

        if lambda == 0.0 || gates.is_empty() {
            let total = if lambda == 0.0 {
                asr
            } else {
                self.graph.scale(asr, T::from_f(1.0 - lambda))
            };
            return Ok((total, LossBreakdown::new(asr_value, Vec::new(), lambda)?));
        }

        let mut mask_values = Vec::with_capacity(gates.len());
        let mut mask_sum: Option<NodeId> = None;
        for &(position, target) in gates {
            if position >= input.len() {
                return Err(Error::Model(format!(
                    "gate position {position} outside {} decoder positions",
                    input.len()
                )));
            }
            if target.len() != d {
                return Err(Error::Model(format!(
                    "mask target has {} frames, model budget is {d}",
                    target.len()
                )));
            }
            let pred = self.mask_branch(hidden, position, enc, rng)?;
            let tgt = self.graph.leaf(Tensor::from_vec(1, d, target.values().to_vec()));
            let loss = self.graph.bce(pred, tgt);
            mask_values.push(self.graph.value(loss).item().to_f());
            mask_sum = Some(match mask_sum {
                None => loss,
                Some(acc) => self.graph.add(acc, loss),
            });
        }
        let asr_part = self.graph.scale(asr, T::from_f(1.0 - lambda));
        let mask_part = self.graph.scale(mask_sum.expect("gates nonempty"), T::from_f(lambda));
        let total = self.graph.add(asr_part, mask_part);
        Ok((total, LossBreakdown::new(asr_value, mask_values, lambda)?))
    }
}
