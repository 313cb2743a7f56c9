//! Adam with bias correction, keyed by named parameter tensors.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

#[derive(Debug, Clone, Default)]
pub struct TensorState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// First/second moments and step counts for every named parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    tensors: HashMap<String, TensorState>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    /// One bias-corrected Adam step on `params` in place. The tensor state
    /// is created lazily on first use.
    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                params: params.len(),
                grads: grads.len(),
            });
        }
        let ts = self.tensors.entry(name.to_string()).or_default();
        if ts.m.len() != params.len() {
            ts.m = vec![0.0; params.len()];
            ts.v = vec![0.0; params.len()];
            ts.step = 0;
        }
        ts.step += 1;
        let bc1 = 1.0 - BETA1.powi(ts.step as i32);
        let bc2 = 1.0 - BETA2.powi(ts.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            ts.m[i] = BETA1 * ts.m[i] + (1.0 - BETA1) * g;
            ts.v[i] = BETA2 * ts.v[i] + (1.0 - BETA2) * g * g;
            let mhat = ts.m[i] / bc1;
            let vhat = ts.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS);
        }
        Ok(())
    }

    /// Rebuild a per-Gaussian tensor's moments after densification:
    /// `parent_of[new_index]` names the Gaussian whose moments each row
    /// inherits. `stride` is the per-Gaussian parameter count.
    pub fn remap(&mut self, name: &str, parent_of: &[usize], stride: usize) {
        if let Some(ts) = self.tensors.get_mut(name) {
            let mut m = Vec::with_capacity(parent_of.len() * stride);
            let mut v = Vec::with_capacity(parent_of.len() * stride);
            for &p in parent_of {
                let off = p * stride;
                if off + stride <= ts.m.len() {
                    m.extend_from_slice(&ts.m[off..off + stride]);
                    v.extend_from_slice(&ts.v[off..off + stride]);
                } else {
                    m.extend(std::iter::repeat(0.0).take(stride));
                    v.extend(std::iter::repeat(0.0).take(stride));
                }
            }
            ts.m = m;
            ts.v = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_grad_leaves_params_but_decays_moments() {
        let mut adam = AdamState::new();
        let mut p = vec![1.0, -2.0];
        adam.step("x", &mut p, &[0.5, 0.5], 0.1).unwrap();
        let after_first = p.clone();
        adam.step("x", &mut p, &[0.0, 0.0], 0.1).unwrap();
        // zero gradient still moves params along the decayed first moment
        assert_ne!(p, after_first);
        adam.step("y", &mut p.clone(), &[0.0, 0.0], 0.1).unwrap();
        // fresh tensor with zero grad: mhat = 0, no movement
        let mut q = vec![3.0];
        adam.step("z", &mut q, &[0.0], 0.1).unwrap();
        assert_eq!(q[0], 3.0);
    }

    /// Hand-computed first step: m = 0.1 g, v = 0.001 g^2, bias correction
    /// makes mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
    #[test]
    fn first_step_matches_hand_computation() {
        let mut adam = AdamState::new();
        let mut p = vec![0.7];
        adam.step("s", &mut p, &[1.0], 0.01).unwrap();
        let expected = 0.7 - 0.01 * 1.0 / (1.0 + EPS);
        assert_relative_eq!(p[0], expected, epsilon = 1e-15);
    }

    /// Constant gradient: bias-corrected update magnitude converges to
    /// lr * g / |g| = lr, the sign-consistent bounded fixed point.
    #[test]
    fn constant_gradient_approaches_lr_sized_steps() {
        let mut adam = AdamState::new();
        let mut p = vec![0.0];
        let mut prev = p[0];
        let mut last_step = 0.0;
        for _ in 0..2000 {
            adam.step("c", &mut p, &[2.5], 1e-3).unwrap();
            last_step = prev - p[0];
            prev = p[0];
        }
        assert_relative_eq!(last_step, 1e-3, max_relative = 1e-3);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = AdamState::new();
        let mut p = vec![0.0; 3];
        assert!(matches!(
            adam.step("x", &mut p, &[1.0; 2], 0.1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn remap_inherits_parent_moments() {
        let mut adam = AdamState::new();
        let mut p = vec![1.0, 2.0, 3.0, 4.0]; // two gaussians, stride 2
        adam.step("g", &mut p, &[0.1, 0.2, 0.3, 0.4], 0.01).unwrap();
        adam.remap("g", &[1, 0, 1], 2);
        let ts = adam.tensors.get("g").unwrap();
        assert_eq!(ts.m.len(), 6);
        assert_relative_eq!(ts.m[0], 0.1 * 0.3, epsilon = 1e-15); // from parent 1
        assert_relative_eq!(ts.m[2], 0.1 * 0.1, epsilon = 1e-15); // from parent 0
        assert_relative_eq!(ts.m[4], 0.1 * 0.3, epsilon = 1e-15); // from parent 1
    }
}
