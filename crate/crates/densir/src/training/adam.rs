//! Adam with bias correction.
//!
//! State is kept per tensor in the model's [`ParamTensors`] order. The
//! update for each element, at step t (1-based):
//!
//! ```text
//! m ← β₁ m + (1−β₁) g          m̂ = m / (1 − β₁ᵗ)
//! v ← β₂ v + (1−β₂) g²         v̂ = v / (1 − β₂ᵗ)
//! θ ← θ − lr · m̂ / (√v̂ + ε)
//! ```
//!
//! ε sits *outside* the square root. After the very first step the update
//! magnitude is `lr · |g| / (|g| + ε)` — almost exactly `lr` for any
//! non-tiny gradient, which the unit tests pin down.

use crate::encoder::ParamTensors;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Fresh zeroed state shaped like `params`.
    pub fn new<P: ParamTensors>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `grads` must be shaped exactly like
    /// `params`; non-finite gradients and learning rates are errors.
    pub fn apply<P: ParamTensors>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid(format!("learning rate {lr}")));
        }
        let mut tensors = params.tensors_mut();
        let g_tensors = grads.tensors();
        if tensors.len() != self.m.len() || g_tensors.len() != self.m.len() {
            return Err(Error::dims(format!(
                "optimizer state holds {} tensors, params {}, grads {}",
                self.m.len(),
                tensors.len(),
                g_tensors.len()
            )));
        }
        for (ti, tensor) in tensors.iter().enumerate() {
            if tensor.len() != self.m[ti].len() || g_tensors[ti].len() != self.m[ti].len() {
                return Err(Error::dims(format!(
                    "tensor {ti}: state {}, params {}, grads {}",
                    self.m[ti].len(),
                    tensor.len(),
                    g_tensors[ti].len()
                )));
            }
            for (k, &g) in g_tensors[ti].iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::non_finite(format!(
                        "gradient tensor {ti} element {k} is {g}"
                    )));
                }
            }
        }

        self.step += 1;
        debug_assert!(self.step < i32::MAX as u64);
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let bias1 = 1.0 - b1.powi(self.step as i32);
        let bias2 = 1.0 - b2.powi(self.step as i32);

        for ((tensor, g_tensor), (m_t, v_t)) in tensors
            .iter_mut()
            .zip(&g_tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &g), m), v) in tensor
                .iter_mut()
                .zip(g_tensor.iter())
                .zip(m_t.iter_mut())
                .zip(v_t.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.config.epsilon);
            }
        }
        Ok(())
    }
}
