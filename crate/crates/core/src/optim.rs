//! Adam with bias correction, over flat parameter vectors.

use ndarray::Array1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first and second moment estimates plus a step counter.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Array1<f64>,
    v: Array1<f64>,
    t: u64,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Array1::zeros(dim),
            v: Array1::zeros(dim),
            t: 0,
        }
    }

    /// One update in place: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut Array1<f64>, grad: &Array1<f64>, lr: f64) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = Array1::from_vec(vec![1.0, -2.0, 0.5]);
        let before = params.clone();
        let mut adam = Adam::new(3, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut params, &Array1::zeros(3), 0.1);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut params = Array1::from_vec(vec![0.0, 0.0]);
        let grad = Array1::from_vec(vec![1.0, -3.0]);
        let mut adam = Adam::new(2, AdamConfig::default());
        adam.step(&mut params, &grad, 0.01);
        // Bias-corrected first step has magnitude ~lr regardless of scale.
        assert!(params[0] < 0.0 && params[0] > -0.011);
        assert!(params[1] > 0.0 && params[1] < 0.011);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize (p - 3)^2.
        let mut params = Array1::from_vec(vec![0.0]);
        let mut adam = Adam::new(1, AdamConfig::default());
        for _ in 0..4000 {
            let grad = Array1::from_vec(vec![2.0 * (params[0] - 3.0)]);
            adam.step(&mut params, &grad, 0.01);
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }
}
