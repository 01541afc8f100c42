//! Graph-building blocks shared by the encoder, decoder, and mask branch:
//! multi-head attention, feed-forward, pre-norm residual wiring, and the
//! constant tensors (sinusoidal positions, causal mask, dropout draws).

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeId, Tensor};
use crate::Scalar;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;
/// Additive attention-mask value; large enough to zero a softmax weight at
/// both f32 and f64.
const ATTN_MASK_NEG: f64 = -1e30;

/// Looks up a bound parameter node. Binding inserts every spec'd name, so a
/// miss is a programming error, not a runtime condition.
pub(crate) fn p(ids: &BTreeMap<String, NodeId>, name: &str) -> NodeId {
    *ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
}

pub(crate) fn layer_norm<T: Scalar>(
    g: &mut Graph<T>,
    ids: &BTreeMap<String, NodeId>,
    prefix: &str,
    x: NodeId,
) -> NodeId {
    let gamma = p(ids, &format!("{prefix}.g"));
    let beta = p(ids, &format!("{prefix}.b"));
    g.layer_norm(x, gamma, beta, T::from_f(LAYER_NORM_EPS))
}

/// Multi-head scaled dot-product attention. Queries come from `q_in`, keys
/// and values from `kv_in`; `causal` adds a strictly-upper-triangular mask
/// (only valid for self-attention, where the score matrix is square).
pub(crate) fn attention<T: Scalar>(
    g: &mut Graph<T>,
    ids: &BTreeMap<String, NodeId>,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    num_heads: usize,
    causal: bool,
) -> NodeId {
    let q = {
        let w = p(ids, &format!("{prefix}.wq"));
        g.matmul(q_in, w)
    };
    let k = {
        let w = p(ids, &format!("{prefix}.wk"));
        g.matmul(kv_in, w)
    };
    let v = {
        let w = p(ids, &format!("{prefix}.wv"));
        g.matmul(kv_in, w)
    };
    let hidden = g.value(q).cols();
    debug_assert_eq!(hidden % num_heads, 0);
    let head_dim = hidden / num_heads;
    let scale = T::from_f(1.0 / (head_dim as f64).sqrt());
    let mask = causal.then(|| {
        let n = g.value(q).rows();
        g.leaf(causal_mask(n))
    });

    let mut heads = Vec::with_capacity(num_heads);
    for i in 0..num_heads {
        let qh = g.slice_cols(q, i * head_dim, head_dim);
        let kh = g.slice_cols(k, i * head_dim, head_dim);
        let vh = g.slice_cols(v, i * head_dim, head_dim);
        let scores = g.matmul_tb(qh, kh);
        let mut scores = g.scale(scores, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m);
        }
        let weights = g.softmax_rows(scores);
        heads.push(g.matmul(weights, vh));
    }
    let merged = g.concat_cols(&heads);
    let wo = p(ids, &format!("{prefix}.wo"));
    g.matmul(merged, wo)
}

pub(crate) fn feed_forward<T: Scalar>(
    g: &mut Graph<T>,
    ids: &BTreeMap<String, NodeId>,
    prefix: &str,
    x: NodeId,
) -> NodeId {
    let w1 = p(ids, &format!("{prefix}.w1"));
    let b1 = p(ids, &format!("{prefix}.b1"));
    let w2 = p(ids, &format!("{prefix}.w2"));
    let b2 = p(ids, &format!("{prefix}.b2"));
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let h = g.matmul(h, w2);
    g.add_row(h, b2)
}

/// Pre-norm encoder block: x + Attn(LN(x)), then x + FFN(LN(x)).
pub(crate) fn encoder_block<T: Scalar>(
    g: &mut Graph<T>,
    ids: &BTreeMap<String, NodeId>,
    prefix: &str,
    x: NodeId,
    num_heads: usize,
) -> NodeId {
    let n1 = layer_norm(g, ids, &format!("{prefix}.ln1"), x);
    let a = attention(g, ids, &format!("{prefix}.attn"), n1, n1, num_heads, false);
    let x = g.add(x, a);
    let n2 = layer_norm(g, ids, &format!("{prefix}.ln2"), x);
    let f = feed_forward(g, ids, &format!("{prefix}.ffn"), n2);
    g.add(x, f)
}

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// encoder states, feed-forward; each with a residual.
pub(crate) fn decoder_block<T: Scalar>(
    g: &mut Graph<T>,
    ids: &BTreeMap<String, NodeId>,
    prefix: &str,
    x: NodeId,
    encoder_states: NodeId,
    num_heads: usize,
) -> NodeId {
    let n1 = layer_norm(g, ids, &format!("{prefix}.ln1"), x);
    let a = attention(g, ids, &format!("{prefix}.self"), n1, n1, num_heads, true);
    let x = g.add(x, a);
    let nc = layer_norm(g, ids, &format!("{prefix}.ln_ca"), x);
    let c = attention(g, ids, &format!("{prefix}.cross"), nc, encoder_states, num_heads, false);
    let x = g.add(x, c);
    let n2 = layer_norm(g, ids, &format!("{prefix}.ln2"), x);
    let f = feed_forward(g, ids, &format!("{prefix}.ffn"), n2);
    g.add(x, f)
}

/// Fixed sinusoidal position encodings: even columns sin, odd columns cos,
/// wavelengths geometric from 2π to 10000·2π.
pub(crate) fn sinusoidal_positions<T: Scalar>(rows: usize, dim: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(rows, dim);
    for pos in 0..rows {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(pos, i, T::from_f(v));
        }
    }
    t
}

/// Additive causal mask: 0 on and below the diagonal, a large negative
/// value strictly above it.
fn causal_mask<T: Scalar>(n: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(n, n);
    for r in 0..n {
        for c in (r + 1)..n {
            m.set(r, c, T::from_f(ATTN_MASK_NEG));
        }
    }
    m
}

/// Inverted-dropout multiplier: each element is 0 with probability `rate`,
/// else 1/(1−rate), so the expected value is the identity.
pub(crate) fn dropout_mask<T: Scalar>(
    rows: usize,
    cols: usize,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let keep = 1.0 - rate;
    let scale = T::from_f(1.0 / keep);
    let data = (0..rows * cols)
        .map(|_| if rng.gen_range(0.0..1.0) < keep { scale } else { T::zero() })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn positions_alternate_sin_cos_and_stay_bounded() {
        let pe: Tensor<f64> = sinusoidal_positions(12, 8);
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert!((pe.at(3, 0) - (3.0f64).sin()).abs() < 1e-12);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        // Distinct positions get distinct encodings.
        assert_ne!(pe.row(2), pe.row(7));
    }

    #[test]
    fn causal_mask_blocks_strictly_future_positions() {
        let m: Tensor<f64> = causal_mask(4);
        for r in 0..4 {
            for c in 0..4 {
                if c > r {
                    assert_eq!(m.at(r, c), ATTN_MASK_NEG);
                } else {
                    assert_eq!(m.at(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn dropout_mask_is_zero_or_inverse_keep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Tensor<f64> = dropout_mask(40, 25, 0.25, &mut rng);
        let (mut zeros, mut kept) = (0, 0);
        for &v in m.data() {
            if v == 0.0 {
                zeros += 1;
            } else {
                assert!((v - 1.0 / 0.75).abs() < 1e-12);
                kept += 1;
            }
        }
        // 1000 draws at 25%: both outcomes must occur, roughly in ratio.
        assert!(zeros > 150 && zeros < 350, "zeros = {zeros}");
        assert!(kept > 650);
    }
}
