//! Adam with bias correction.

use crate::error::Result;

use super::params::{check_grad_shapes, ParamSet};
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> AdamState {
        let first_moment = params
            .ids()
            .map(|id| vec![0.0; params.value(id).numel()])
            .collect();
        let second_moment = params
            .ids()
            .map(|id| vec![0.0; params.value(id).numel()])
            .collect();
        AdamState {
            config,
            first_moment,
            second_moment,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        check_grad_shapes(params, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for (idx, id) in params.ids().enumerate() {
            let g = grads[idx].data();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let p = params.value_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference recurrence, kept independent of the vectorized path.
    fn adam_reference(grads: &[f64], w0: f64, cfg: AdamConfig) -> f64 {
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        w
    }

    fn single_param(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.alloc("w", Tensor::scalar(value));
        p
    }

    fn first_id(p: &ParamSet) -> super::super::params::ParamId {
        p.ids().next().unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(0.7);
        let mut adam = AdamState::new(&params, AdamConfig::default());
        adam.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(params.value(first_id(&params)).scalar_value(), 0.7);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_scalar_recurrence() {
        // g = 1, lr = 0.1: bias-corrected first step moves by ~lr.
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut params = single_param(0.0);
        let mut adam = AdamState::new(&params, cfg);
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let got = params.value(first_id(&params)).scalar_value();
        let expect = adam_reference(&[1.0], 0.0, cfg);
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        assert!((got + 0.1).abs() < 1e-6, "first step ≈ -lr, got {got}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = w^2, grad = 2w, 200 steps from w = 1.
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut params = single_param(1.0);
        let mut adam = AdamState::new(&params, cfg);
        let id = first_id(&params);
        for _ in 0..200 {
            let w = params.value(id).scalar_value();
            adam.step(&mut params, &[Tensor::scalar(2.0 * w)]).unwrap();
        }
        let w = params.value(id).scalar_value();
        assert!(w.abs() < 1e-2, "did not reach the bowl floor: {w}");
    }

    #[test]
    fn multi_step_matches_reference() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
        let mut params = single_param(0.4);
        let mut adam = AdamState::new(&params, cfg);
        let id = first_id(&params);
        for &g in &grads {
            adam.step(&mut params, &[Tensor::scalar(g)]).unwrap();
        }
        let expect = adam_reference(&grads, 0.4, cfg);
        assert!((params.value(id).scalar_value() - expect).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = single_param(0.0);
        let mut adam = AdamState::new(&params, AdamConfig::default());
        let bad = Tensor::zeros(vec![2]);
        assert!(adam.step(&mut params, &[bad]).is_err());
    }
}
