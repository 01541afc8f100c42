//! Named parameter store: every trainable tensor is addressable by a path
//! like `dec.b1.cross.wq`, so gradient checks, the optimizer, and
//! checkpoints all speak the same names.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::model::ModelConfig;
use crate::Scalar;

/// Channel widths of the mask-branch convolution stack.
pub(crate) const CNN_CHANNELS_1: usize = 32;
pub(crate) const CNN_CHANNELS_2: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    /// Uniform in ±sqrt(6 / (rows + cols)).
    Xavier,
    /// All ones (layer-norm gains).
    One,
    /// All zeros (biases, layer-norm shifts).
    Zero,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// The full parameter list for a config, in initialization order. This is
/// the single source of truth: `Parameters::init` draws in this order and
/// checkpoint loading validates against it.
pub(crate) fn parameter_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let h = config.hidden_dim;
    let ff = 4 * h;
    let mut specs = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, init: Init| {
        specs.push(ParamSpec { name, rows, cols, init });
    };
    let norm = |push: &mut dyn FnMut(String, usize, usize, Init), prefix: &str| {
        push(format!("{prefix}.g"), 1, h, Init::One);
        push(format!("{prefix}.b"), 1, h, Init::Zero);
    };
    let attn = |push: &mut dyn FnMut(String, usize, usize, Init), prefix: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("{prefix}.{w}"), h, h, Init::Xavier);
        }
    };
    let ffn = |push: &mut dyn FnMut(String, usize, usize, Init), prefix: &str| {
        push(format!("{prefix}.w1"), h, ff, Init::Xavier);
        push(format!("{prefix}.b1"), 1, ff, Init::Zero);
        push(format!("{prefix}.w2"), ff, h, Init::Xavier);
        push(format!("{prefix}.b2"), 1, h, Init::Zero);
    };

    push("enc.frontend.w".into(), 2 * config.num_mels, h, Init::Xavier);
    push("enc.frontend.b".into(), 1, h, Init::Zero);
    for i in 0..config.num_encoder_blocks {
        norm(&mut push, &format!("enc.b{i}.ln1"));
        attn(&mut push, &format!("enc.b{i}.attn"));
        norm(&mut push, &format!("enc.b{i}.ln2"));
        ffn(&mut push, &format!("enc.b{i}.ffn"));
    }
    norm(&mut push, "enc.ln_out");

    push("dec.embed".into(), config.vocab_size, h, Init::Xavier);
    for i in 0..config.num_decoder_blocks {
        norm(&mut push, &format!("dec.b{i}.ln1"));
        attn(&mut push, &format!("dec.b{i}.self"));
        norm(&mut push, &format!("dec.b{i}.ln_ca"));
        attn(&mut push, &format!("dec.b{i}.cross"));
        norm(&mut push, &format!("dec.b{i}.ln2"));
        ffn(&mut push, &format!("dec.b{i}.ffn"));
    }
    norm(&mut push, "dec.ln_out");
    push("dec.proj.w".into(), h, config.vocab_size, Init::Xavier);
    push("dec.proj.b".into(), 1, config.vocab_size, Init::Zero);

    if config.mask_variant.uses_cross_attention() {
        norm(&mut push, "mask.ca.ln");
        attn(&mut push, "mask.ca");
    }
    push("mask.fc.w".into(), h, config.max_frames, Init::Xavier);
    push("mask.fc.b".into(), 1, config.max_frames, Init::Zero);
    if config.mask_variant.uses_cnn() {
        push("mask.conv1.w".into(), 2, CNN_CHANNELS_1, Init::Xavier);
        push("mask.conv1.b".into(), 1, CNN_CHANNELS_1, Init::Zero);
        push("mask.conv2.w".into(), 2 * CNN_CHANNELS_1, CNN_CHANNELS_2, Init::Xavier);
        push("mask.conv2.b".into(), 1, CNN_CHANNELS_2, Init::Zero);
        push("mask.out.w".into(), CNN_CHANNELS_2, 1, Init::Xavier);
        push("mask.out.b".into(), 1, 1, Init::Zero);
    }
    specs
}

/// Trainable weights keyed by path name. Iteration order is always
/// name-sorted, so optimizer state and serialized checkpoints line up
/// deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T: Scalar> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Parameters<T> {
    /// Draws every tensor for `specs` in order from a ChaCha8 stream seeded
    /// with `seed`; same seed, same weights, bit for bit.
    pub(crate) fn init(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for spec in specs {
            let n = spec.rows * spec.cols;
            let data: Vec<T> = match spec.init {
                Init::Xavier => {
                    let limit = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
                    (0..n).map(|_| T::from_f(rng.gen_range(-limit..limit))).collect()
                }
                Init::One => vec![T::one(); n],
                Init::Zero => vec![T::zero(); n],
            };
            tensors.insert(spec.name.clone(), Tensor::from_vec(spec.rows, spec.cols, data));
        }
        Self { tensors }
    }

    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Model(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Model(format!("unknown parameter {name}")))
    }

    /// Name-sorted iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}
