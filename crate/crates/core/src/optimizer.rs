//! Adam updates for every trainable tensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam.lr must be positive, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!(
                    "adam.{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adam.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamTensorState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Moments for all tensors, keyed by a stable name, plus the shared step
/// counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub tensors: BTreeMap<String, AdamTensorState>,
}

/// One Adam update on a flat parameter slice.
///
/// `t` is the 1-based step count used for bias correction; callers bump
/// it once per optimizer step, not per tensor.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamTensorState,
    t: u64,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam_step: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {bad}")));
    }
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Convenience wrapper pairing the config with named tensor state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    /// Advance the shared step counter; call once per minibatch.
    pub fn begin_step(&mut self) {
        self.state.t += 1;
    }

    pub fn update(&mut self, name: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let entry = self
            .state
            .tensors
            .entry(name.to_string())
            .or_insert_with(|| AdamTensorState {
                m: vec![0.0; params.len()],
                v: vec![0.0; params.len()],
            });
        adam_step(params, grads, entry, self.state.t, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut theta = [1.0];
        let mut state = AdamTensorState {
            m: vec![0.0],
            v: vec![0.0],
        };
        adam_step(&mut theta, &[1.0], &mut state, 1, &config).unwrap();
        // Bias correction makes m_hat = v_hat = 1 on the first step.
        assert!((theta[0] - 0.9).abs() < 1e-8, "theta {}", theta[0]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let config = AdamConfig::default();
        let mut theta = [0.25, -0.5];
        let mut state = AdamTensorState {
            m: vec![0.0; 2],
            v: vec![0.0; 2],
        };
        adam_step(&mut theta, &[0.0, 0.0], &mut state, 1, &config).unwrap();
        assert_eq!(theta, [0.25, -0.5]);
    }

    #[test]
    fn quadratic_descent_shrinks_magnitude_every_step() {
        let config = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(config);
        let mut theta = [1.0f64];
        let mut prev = theta[0].abs();
        for _ in 0..10 {
            let grad = [2.0 * theta[0]];
            adam.begin_step();
            adam.update("theta", &mut theta, &grad).unwrap();
            assert!(theta[0].abs() < prev, "|theta| did not shrink: {theta:?}");
            prev = theta[0].abs();
        }
    }

    #[test]
    fn first_step_is_sign_following() {
        let config = AdamConfig::default();
        let grads = [3.0, -0.004, 1e-7];
        let mut theta = [0.0; 3];
        let mut state = AdamTensorState {
            m: vec![0.0; 3],
            v: vec![0.0; 3],
        };
        adam_step(&mut theta, &grads, &mut state, 1, &config).unwrap();
        for (p, g) in theta.iter().zip(&grads) {
            assert!(p * g < 0.0, "step not opposite to gradient: {p} vs {g}");
        }
    }

    #[test]
    fn nonfinite_gradient_fails_fast() {
        let config = AdamConfig::default();
        let mut theta = [1.0];
        let mut state = AdamTensorState {
            m: vec![0.0],
            v: vec![0.0],
        };
        let before = theta;
        assert!(matches!(
            adam_step(&mut theta, &[f64::NAN], &mut state, 1, &config),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(theta, before);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let config = AdamConfig::default();
        let mut theta = [1.0, 2.0];
        let mut state = AdamTensorState {
            m: vec![0.0; 2],
            v: vec![0.0; 2],
        };
        assert!(adam_step(&mut theta, &[1.0], &mut state, 1, &config).is_err());
    }

    #[test]
    fn state_round_trips_bit_exactly_through_json() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = [0.1, 0.2, 0.3];
        for step in 0..5 {
            adam.begin_step();
            let g = [0.3 * step as f64, -1.7, 0.009];
            adam.update("w", &mut theta, &g).unwrap();
        }
        let json = serde_json::to_string(&adam.state).unwrap();
        let back: AdamState = serde_json::from_str(&json).unwrap();
        assert_eq!(adam.state, back);
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut theta = [0.5; 4];
        for i in 0..20 {
            adam.begin_step();
            let g = [(i as f64).sin(), -2.0, 0.0, 1e3];
            adam.update("w", &mut theta, &g).unwrap();
        }
        let st = &adam.state.tensors["w"];
        assert!(st.v.iter().all(|&v| v >= 0.0));
    }
}

