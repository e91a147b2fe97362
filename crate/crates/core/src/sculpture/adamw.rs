//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub hyper: AdamWConfig,
}

impl AdamWState {
    pub fn new(len: usize, hyper: AdamWConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            hyper,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One update in place: `p ← p(1 − η·wd)`, then the bias-corrected Adam
    /// step `p ← p − η m̂/(√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer parameter count",
                expected: self.len(),
                got: if params.len() != self.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *p *= 1.0 - lr * weight_decay;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamWState::step`].
pub fn adamw_step(
    state: &AdamWState,
    params: &[f64],
    grads: &[f64],
) -> Result<(Vec<f64>, AdamWState)> {
    let mut state = state.clone();
    let mut params = params.to_vec();
    state.step(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let hyper = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (p, s) = adamw_step(&AdamWState::new(3, hyper), &[1.0, -2.0, 0.5], &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g² after one step, so the move is −η g/(|g| + eps).
        let hyper = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let g = [0.5, -3.0, 1e-9];
        let (p, _) = adamw_step(&AdamWState::new(3, hyper), &[0.0; 3], &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expect = -0.1 * gi / (gi.abs() + 1e-8);
            assert!((pi - expect).abs() < 1e-15, "{pi} vs {expect}");
        }
    }

    #[test]
    fn decay_only() {
        let hyper = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let (p, _) = adamw_step(&AdamWState::new(2, hyper), &[2.0, -4.0], &[0.0; 2]).unwrap();
        assert_eq!(p, vec![2.0 * (1.0 - 0.001), -4.0 * (1.0 - 0.001)]);
    }

    #[test]
    fn matches_hand_stepped_adam() {
        // two parameters, three steps, wd = 0, computed by hand-rolled recursion
        let hyper = AdamWConfig {
            lr: 0.05,
            beta1: 0.8,
            beta2: 0.9,
            eps: 1e-6,
            weight_decay: 0.0,
        };
        let grads = [[0.3, -1.0], [0.1, 0.4], [-0.2, 0.2]];
        let mut state = AdamWState::new(2, hyper);
        let mut p = vec![1.0, 1.0];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        let mut q = [1.0f64, 1.0];
        for (t, g) in grads.iter().enumerate() {
            state.step(&mut p, g).unwrap();
            let t = (t + 1) as i32;
            for i in 0..2 {
                m[i] = 0.8 * m[i] + 0.2 * g[i];
                v[i] = 0.9 * v[i] + 0.1 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.8f64.powi(t));
                let vh = v[i] / (1.0 - 0.9f64.powi(t));
                q[i] -= 0.05 * mh / (vh.sqrt() + 1e-6);
            }
        }
        assert_eq!(p, q.to_vec());
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamWState::new(2, AdamWConfig::default());
        assert!(s.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
