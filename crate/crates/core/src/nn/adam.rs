//! Adam optimizer over the model's parameter tensors.

use serde::{Deserialize, Serialize};

use super::DnnParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: DnnParams,
    v: DnnParams,
    step: u64,
}

impl AdamState {
    pub fn new(params: &DnnParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Standard Adam update with bias correction, in place.
    pub fn step(&mut self, params: &mut DnnParams, grads: &DnnParams, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let p = params.tensors_mut();
        let g = grads.tensors();
        let m = self.m.tensors_mut();
        let v = self.v.tensors_mut();
        for (((pt, gt), mt), vt) in p.into_iter().zip(g).zip(m).zip(v) {
            for k in 0..pt.len() {
                let gk = gt[k];
                mt[k] = cfg.beta1 * mt[k] + (1.0 - cfg.beta1) * gk;
                vt[k] = cfg.beta2 * vt[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = mt[k] / bc1;
                let v_hat = vt[k] / bc2;
                pt[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{DnnArchitecture, DnnParams};

    fn small_params(seed: u64) -> DnnParams {
        let arch = DnnArchitecture::new(4, 2, 0).unwrap();
        DnnParams::init(&arch, seed)
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut params = small_params(3);
        let before = params.clone();
        let mut grads = params.zeros_like();
        for t in grads.tensors_mut() {
            for x in t.iter_mut() {
                *x = 0.37; // constant positive gradient
            }
        }
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, &cfg);
        // bias-corrected m/sqrt(v) = g/|g| on the first step
        for (after, orig) in params.tensors().iter().zip(before.tensors()) {
            for k in 0..after.len() {
                let delta = after[k] - orig[k];
                assert!(
                    (delta + cfg.learning_rate).abs() < 1e-6,
                    "delta {delta} vs -lr"
                );
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = small_params(4);
        let before = params.clone();
        let grads = params.zeros_like();
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, &AdamConfig::default());
        assert_eq!(params, before);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut params = small_params(5);
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig::default();
            for iter in 0..5 {
                let mut grads = params.zeros_like();
                for (ti, t) in grads.tensors_mut().into_iter().enumerate() {
                    for (k, x) in t.iter_mut().enumerate() {
                        *x = ((iter + ti + k) as f64 * 0.01).sin();
                    }
                }
                state.step(&mut params, &grads, &cfg);
            }
            params
        };
        assert_eq!(run(), run());
    }
}
