//! Adam with bias correction, keyed by parameter name so a subset of the
//! model (e.g. the mask branch on a batch without speaker tokens) can sit a
//! step out without disturbing its moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::model::Parameters;
use crate::Scalar;

pub const BETA_1: f64 = 0.9;
pub const BETA_2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus a per-parameter update count (the
/// count drives bias correction, so skipped parameters correct against
/// their own step number, not the global one).
#[derive(Debug, Clone, Default)]
pub struct AdamState<T: Scalar> {
    moments: BTreeMap<String, Moments<T>>,
}

#[derive(Debug, Clone)]
struct Moments<T: Scalar> {
    m: Tensor<T>,
    v: Tensor<T>,
    t: u32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self { moments: BTreeMap::new() }
    }

    /// Update count for one parameter (0 before its first step).
    pub fn steps(&self, name: &str) -> u32 {
        self.moments.get(name).map_or(0, |m| m.t)
    }
}

/// One Adam update over exactly the parameters named in `grads`. Rejects the
/// whole step — touching nothing — on a shape mismatch or a non-finite
/// gradient value.
pub fn adam_step<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for (name, grad) in grads {
        let p = params.get(name)?;
        if (grad.rows(), grad.cols()) != (p.rows(), p.cols()) {
            return Err(Error::Train(format!(
                "gradient for {name} is {}x{}, parameter is {}x{}",
                grad.rows(),
                grad.cols(),
                p.rows(),
                p.cols()
            )));
        }
        if !grad.data().iter().all(|g| g.is_finite()) {
            return Err(Error::Train(format!(
                "non-finite gradient for {name}; aborting the step"
            )));
        }
    }

    let (b1, b2, eps) = (T::from_f(BETA_1), T::from_f(BETA_2), T::from_f(EPSILON));
    let lr = T::from_f(lr);
    for (name, grad) in grads {
        let entry = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(grad.rows(), grad.cols()),
            v: Tensor::zeros(grad.rows(), grad.cols()),
            t: 0,
        });
        entry.t += 1;
        let corr1 = T::one() - T::from_f(BETA_1.powi(entry.t as i32));
        let corr2 = T::one() - T::from_f(BETA_2.powi(entry.t as i32));
        let p = params.get_mut(name)?;
        for ((pv, g), (m, v)) in p
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(entry.m.data_mut().iter_mut().zip(entry.v.data_mut().iter_mut()))
        {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MaskVariant, Model, ModelConfig};

    fn tiny_model() -> Model<f64> {
        let config = ModelConfig {
            num_encoder_blocks: 1,
            num_decoder_blocks: 1,
            hidden_dim: 4,
            num_heads: 2,
            num_mels: 2,
            max_frames: 4,
            vocab_size: 8,
            mask_variant: MaskVariant::LFc,
            dropout_mask_cnn: 0.25,
        };
        Model::new(config, 1).unwrap()
    }

    #[test]
    fn zero_gradient_from_fresh_state_moves_nothing() {
        let mut model = tiny_model();
        let before = model.clone();
        let mut state = AdamState::new();
        let grads: BTreeMap<String, Tensor<f64>> = model
            .params()
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows(), t.cols())))
            .collect();
        adam_step(model.params_mut(), &grads, &mut state, 1e-3).unwrap();
        assert_eq!(model, before);
        assert_eq!(state.steps("dec.embed"), 1);
    }

    #[test]
    fn first_step_magnitude_is_the_learning_rate_times_sign() {
        let mut model = tiny_model();
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        let shape = {
            let t = model.params().get("mask.fc.b").unwrap();
            (t.rows(), t.cols())
        };
        let g = Tensor::from_vec(shape.0, shape.1, vec![0.3; shape.0 * shape.1]);
        grads.insert("mask.fc.b".to_string(), g);
        let before = model.params().get("mask.fc.b").unwrap().clone();
        adam_step(model.params_mut(), &grads, &mut state, 1e-3).unwrap();
        let after = model.params().get("mask.fc.b").unwrap();
        for (b, a) in before.data().iter().zip(after.data()) {
            // Bias-corrected first step: m_hat = g, v_hat = g^2, so the
            // update is lr * g / (|g| + eps) = lr * sign(g) almost exactly.
            let delta = b - a;
            assert!((delta - 1e-3).abs() < 1e-9, "delta {delta}");
        }
        // Untouched parameters stay untouched.
        assert_eq!(state.steps("dec.embed"), 0);
    }

    #[test]
    fn non_finite_gradients_abort_without_side_effects() {
        let mut model = tiny_model();
        let before = model.clone();
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        let t = model.params().get("dec.proj.b").unwrap();
        let mut g = Tensor::zeros(t.rows(), t.cols());
        g.data_mut()[0] = f64::NAN;
        grads.insert("dec.proj.b".to_string(), g);
        assert!(adam_step(model.params_mut(), &grads, &mut state, 1e-3).is_err());
        assert_eq!(model, before);
        assert_eq!(state.steps("dec.proj.b"), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut model = tiny_model();
        let mut state = AdamState::new();
        let mut grads = BTreeMap::new();
        grads.insert("dec.proj.b".to_string(), Tensor::<f64>::zeros(2, 2));
        assert!(adam_step(model.params_mut(), &grads, &mut state, 1e-3).is_err());
    }

    #[test]
    fn quadratic_descent_matches_a_hand_rolled_scalar_adam() {
        // Minimize x^2 from x = 1. The reference loop below is written
        // directly from the update equations, independent of adam_step.
        let mut params = {
            let mut map = BTreeMap::new();
            map.insert("x".to_string(), Tensor::from_vec(1, 1, vec![1.0f64]));
            crate::model::Parameters::from_map(map)
        };
        let mut state = AdamState::new();
        let lr = 0.01;

        let (mut rm, mut rv, mut rx) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=500u32 {
            let g = 2.0 * params.get("x").unwrap().item();
            let mut grads = BTreeMap::new();
            grads.insert("x".to_string(), Tensor::from_vec(1, 1, vec![g]));
            adam_step(&mut params, &grads, &mut state, lr).unwrap();

            let rg = 2.0 * rx;
            rm = 0.9 * rm + 0.1 * rg;
            rv = 0.999 * rv + 0.001 * rg * rg;
            let m_hat = rm / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = rv / (1.0 - 0.999f64.powi(t as i32));
            rx -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
        let x = params.get("x").unwrap().item();
        assert!((x - rx).abs() < 1e-12, "adam_step {x} vs reference {rx}");
        assert!(x.abs() < 1e-3, "did not converge: {x}");
    }
}
