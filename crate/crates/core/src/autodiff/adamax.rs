//! Adamax: Adam with an infinity-norm second moment.
//!
//! Per parameter tensor with step counter `t`:
//! m ← β₁·m + (1−β₁)·g,  u ← max(β₂·u, |g|),  θ ← θ − (α / (1−β₁ᵗ)) · m / (u + ε).
//!
//! On a tensor's first update this moves every coordinate by exactly
//! −α·g/(|g|+ε) ≈ −α·sign(g).

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

struct TensorState<T> {
    m: Vec<T>,
    u: Vec<T>,
    t: u32,
}

pub struct Adamax<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    steps: u64,
    state: Vec<Option<TensorState<T>>>,
}

impl<T: Scalar> Adamax<T> {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adamax {
            lr: lit(lr),
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            steps: 0,
            state: (0..n_params).map(|_| None).collect(),
        }
    }

    /// Number of `step` calls so far.
    pub fn step_count(&self) -> u64 {
        self.steps
    }

    /// One update over `(param, grad)` pairs, ordered by stable parameter index.
    /// A tensor whose gradient is entirely zero is left untouched — state and step
    /// counter included — so parameters outside the active graph never drift.
    pub fn step(&mut self, updates: &mut [(&mut [T], &[T])]) -> Result<()> {
        if updates.len() != self.state.len() {
            return Err(Error::Contract(format!(
                "optimizer was built for {} parameter tensors, got {}",
                self.state.len(),
                updates.len()
            )));
        }
        self.steps += 1;
        for (slot, (param, grad)) in self.state.iter_mut().zip(updates.iter_mut()) {
            if param.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter/gradient length mismatch: {} vs {}",
                    param.len(),
                    grad.len()
                )));
            }
            if grad.iter().all(|g| *g == T::zero()) {
                continue;
            }
            let st = slot.get_or_insert_with(|| TensorState {
                m: vec![T::zero(); param.len()],
                u: vec![T::zero(); param.len()],
                t: 0,
            });
            st.t += 1;
            let bias_fix = T::one() - self.beta1.powi(st.t as i32);
            let rate = self.lr / bias_fix;
            for i in 0..param.len() {
                let g = grad[i];
                st.m[i] = self.beta1 * st.m[i] + (T::one() - self.beta1) * g;
                st.u[i] = (self.beta2 * st.u[i]).max(g.abs());
                param[i] = param[i] - rate * st.m[i] / (st.u[i] + self.eps);
            }
        }
        Ok(())
    }
}
