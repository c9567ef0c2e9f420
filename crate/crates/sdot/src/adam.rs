//! Bias-corrected Adam over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

/// Adam hyperparameters. The default learning rate of 0.005 is the height
/// network's default; callers override it per pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 0.005, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Optimizer state: step count plus first/second moment accumulators shaped
/// like the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    /// Fresh state (zero moments) for `n` parameters.
    pub fn new(n: usize, hyper: AdamParams) -> Self {
        Self { hyper, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub(crate) fn from_parts(hyper: AdamParams, step: u64, m: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(invalid_input("adam moment vectors differ in length"));
        }
        Ok(Self { hyper, step, m, v })
    }

    pub(crate) fn parts(&self) -> (u64, &[f64], &[f64]) {
        (self.step, &self.m, &self.v)
    }
}

/// One Adam update, in place. `params`, `grads` and the moment buffers must
/// all have the same length.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(invalid_input(format!(
            "adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let AdamParams { lr, beta1, beta2, epsilon } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, AdamParams::default());
        adam_step(&mut p, &[0.0, 0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // From zero moments, one step with constant gradient g gives
        // -lr * g / (|g| + eps) after bias correction.
        let hyper = AdamParams::default();
        let g = [0.3, -1.7, 0.0001];
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3, hyper);
        adam_step(&mut p, &g, &mut st).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expect = -hyper.lr * gi / (gi.abs() + hyper.epsilon);
            assert!((pi - expect).abs() < 1e-12, "{pi} vs {expect}");
        }
    }

    #[test]
    fn identical_calls_are_bitwise_identical() {
        let run = || {
            let mut p = vec![0.5, -0.25, 0.125, 2.0];
            let mut st = AdamState::new(4, AdamParams::with_lr(0.01));
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| x.sin() + k as f64 * 1e-3).collect();
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(3, AdamParams::default());
        assert!(adam_step(&mut p, &[1.0, 1.0], &mut st).is_err());
        let mut st2 = AdamState::new(2, AdamParams::default());
        assert!(adam_step(&mut p, &[1.0], &mut st2).is_err());
    }
}
