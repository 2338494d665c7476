use serde::{Deserialize, Serialize};

use super::{MlpParams, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &MlpParams) -> Self {
        let n = params.parameter_count();
        Self {
            config,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &MlpParams) -> Result<(), NeuralError> {
        let n = params.parameter_count();
        if grads.parameter_count() != n || self.first.len() != n {
            return Err(NeuralError::Shape {
                expected: n,
                got: grads.parameter_count(),
            });
        }
        if !grads.is_finite() {
            return Err(NeuralError::Diverged);
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .values_mut()
            .zip(grads.values())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Dense, MlpSpec};

    fn scalar(w: f64) -> MlpParams {
        MlpParams {
            spec: MlpSpec::new(1, vec![], 1),
            layers: vec![Dense {
                inputs: 1,
                outputs: 1,
                weights: vec![w],
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.apply(&mut p, &scalar(0.0)).unwrap();
        assert_eq!(p, scalar(0.7));
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn step_descends_half_square() {
        let mut p = scalar(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &p);
        let w = p.layers[0].weights[0];
        adam.apply(&mut p, &scalar(w)).unwrap();
        assert!(p.layers[0].weights[0].abs() < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w, b) = 0.5 (w - 3)^2 + 2 (b + 1)^2
        let mut p = scalar(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg, &p);
        let mut steps = 0;
        loop {
            let w = p.layers[0].weights[0];
            let b = p.layers[0].bias[0];
            let f = 0.5 * (w - 3.0).powi(2) + 2.0 * (b + 1.0).powi(2);
            if f < 1e-6 {
                break;
            }
            assert!(steps < 10_000, "no convergence, f = {f}");
            let mut g = scalar(w - 3.0);
            g.layers[0].bias[0] = 4.0 * (b + 1.0);
            adam.apply(&mut p, &g).unwrap();
            steps += 1;
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let err = adam.apply(&mut p, &scalar(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("diverged"));
    }
}
