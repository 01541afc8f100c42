//! Training loop: cosine-restart learning rate, per-example gradient
//! accumulation, global-norm clipping, and Adam updates, with a
//! deterministic mode that replays bit-for-bit.

mod adam;
mod dataset;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, BETA_1, BETA_2, EPSILON};
pub use dataset::{examples_to_training_set, load_training_set, TrainExample};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::labels::{LabelScheme, Vocabulary};
use crate::model::Model;
use crate::Scalar;

/// Gradients are rescaled when their global L2 norm exceeds this.
pub const GRAD_CLIP_NORM: f64 = 1.0;

/// Everything the loop needs besides the model and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Which label serialization the examples were built with.
    pub scheme: LabelScheme,
    /// Mask-loss weight in `(1 - lambda) * asr + lambda * mask`.
    pub lambda: f64,
    pub lr_init: f64,
    pub lr_min: f64,
    /// Cosine restart period in steps; 0 means one epoch of steps.
    pub restart_period_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// When set, shuffling and dropout derive from `seed` and a rerun
    /// reproduces the exact same parameter trajectory.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: LabelScheme::SpkTs2,
            lambda: 0.5,
            lr_init: 1e-4,
            lr_min: 1e-8,
            restart_period_steps: 0,
            epochs: 1,
            batch_size: 8,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Train(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.lr_min > 0.0 && self.lr_init >= self.lr_min) {
            return Err(Error::Train(format!(
                "learning rates must satisfy 0 < lr_min <= lr_init, got lr_min={} lr_init={}",
                self.lr_min, self.lr_init
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Train("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Train("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate with warm restarts. The schedule starts
/// each period at `lr_init`, decays to `lr_min` as the period ends, and
/// snaps back at the next period boundary. The restart period must already
/// be resolved (nonzero) in `config`.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    let period = config.restart_period_steps;
    if period == 0 {
        return Err(Error::Train(
            "restart period is unresolved; substitute the steps per epoch before querying".into(),
        ));
    }
    let phase = (step % period) as f64 / period as f64;
    Ok(config.lr_min
        + 0.5 * (config.lr_init - config.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos()))
}

/// One optimizer step's log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    /// Batch-mean ASR loss.
    pub asr_loss: f64,
    /// Batch-mean of each example's summed per-speaker mask losses.
    pub mask_loss: f64,
    /// Batch-mean weighted total.
    pub combined: f64,
}

/// Writes step metrics as JSON lines, one step per line.
pub fn save_metrics(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Trains `model` in place over `examples` and returns the per-step metrics.
pub fn train_run<T: Scalar>(
    model: &mut Model<T>,
    examples: &[TrainExample<T>],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Vec<StepMetrics>> {
    train_run_with(model, examples, vocab, config, |_, _| Ok(()))
}

/// [`train_run`] with a per-step callback, called after each parameter
/// update with the step's metrics and the updated model — the hook for
/// streaming logs and periodic checkpoints.
pub fn train_run_with<T: Scalar>(
    model: &mut Model<T>,
    examples: &[TrainExample<T>],
    vocab: &Vocabulary,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepMetrics, &Model<T>) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Train("no training examples".into()));
    }
    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let schedule = TrainConfig {
        restart_period_steps: if config.restart_period_steps > 0 {
            config.restart_period_steps
        } else {
            steps_per_epoch
        },
        ..config.clone()
    };

    let seed = if config.deterministic { config.seed } else { rand::thread_rng().gen::<u64>() };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(0);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);

    let param_names: Vec<String> = model.params().names().cloned().collect();
    let pad_id = vocab.pad_id();
    let mut adam = AdamState::new();
    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            let lr = lr_at(step, &schedule)?;
            let mut grads: BTreeMap<String, Tensor<T>> = BTreeMap::new();
            let mut asr_sum = 0.0;
            let mut mask_sum = 0.0;
            let mut combined_sum = 0.0;
            let mut gated_positions = 0usize;

            for &index in batch {
                let example = &examples[index];
                let padded = pad_label(&example.label, longest_label(batch, examples), pad_id);
                let gates: Vec<_> =
                    example.gates.iter().map(|(position, mask)| (*position, mask)).collect();
                gated_positions += gates.len();
                let mut session = model.session(true);
                let (loss, breakdown) = session.example_loss(
                    &example.features,
                    &padded,
                    pad_id,
                    &gates,
                    config.lambda,
                    &mut dropout_rng,
                )?;
                session.backward(loss);
                for name in &param_names {
                    if let Some(grad) = session.gradient(name) {
                        match grads.get_mut(name) {
                            Some(sum) => sum.add_scaled(grad, T::one()),
                            None => {
                                grads.insert(name.clone(), grad.clone());
                            }
                        }
                    }
                }
                asr_sum += breakdown.asr_loss;
                mask_sum += breakdown.mask_losses.iter().sum::<f64>();
                combined_sum += breakdown.combined;
            }

            if config.lambda > 0.0 && gated_positions == 0 {
                log::warn!("step {step}: batch has no mask targets, training the ASR path only");
            }

            let inv_batch = T::from_f(1.0 / batch.len() as f64);
            for grad in grads.values_mut() {
                let scaled: Vec<T> = grad.data().iter().map(|&g| g * inv_batch).collect();
                grad.data_mut().copy_from_slice(&scaled);
            }
            clip_global_norm(&mut grads, GRAD_CLIP_NORM);
            adam_step(model.params_mut(), &grads, &mut adam, lr)?;

            let batch_len = batch.len() as f64;
            let entry = StepMetrics {
                step,
                lr,
                asr_loss: asr_sum / batch_len,
                mask_loss: mask_sum / batch_len,
                combined: combined_sum / batch_len,
            };
            on_step(&entry, model)?;
            metrics.push(entry);
            step += 1;
        }
    }
    Ok(metrics)
}

fn longest_label<T: Scalar>(batch: &[usize], examples: &[TrainExample<T>]) -> usize {
    batch.iter().map(|&i| examples[i].label.len()).max().unwrap_or(0)
}

fn pad_label(label: &[u32], len: usize, pad_id: u32) -> Vec<u32> {
    let mut padded = label.to_vec();
    padded.resize(len.max(label.len()), pad_id);
    padded
}

/// Rescales the whole gradient set when its global L2 norm exceeds
/// `max_norm`, preserving direction.
fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) {
    let total: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|&x| x.to_f() * x.to_f()).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = T::from_f(max_norm / norm);
        for grad in grads.values_mut() {
            let scaled: Vec<T> = grad.data().iter().map(|&g| g * scale).collect();
            grad.data_mut().copy_from_slice(&scaled);
        }
    }
}
