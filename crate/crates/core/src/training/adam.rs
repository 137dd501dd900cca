//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One update. Returns `false` and leaves everything untouched when a
    /// gradient is not finite.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> bool {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if grads.iter().any(|g| !g.is_finite()) {
            return false;
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = beta1 * self.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            if m == 0.0 {
                continue;
            }
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut a = Adam::new(2, AdamConfig::default());
        a.m = vec![0.5, -0.2];
        a.v = vec![0.1, 0.3];
        a.step = 3;
        let mut p = vec![1.0, 2.0];
        // Non-zero moments still move parameters; with zero moments they do not.
        let mut b = Adam::new(2, AdamConfig::default());
        let mut q = p.clone();
        assert!(b.update(&mut q, &[0.0, 0.0], 0.1));
        assert_eq!(q, p);
        assert!(a.update(&mut p, &[0.0, 0.0], 0.0));
        assert!((a.m[0] - 0.45).abs() < 1e-15 && (a.m[1] + 0.18).abs() < 1e-15);
        assert!((a.v[0] - 0.0999).abs() < 1e-15 && (a.v[1] - 0.2997).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr() {
        let mut a = Adam::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        a.update(&mut p, &[1.0], 0.1);
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_matches_hand_iteration() {
        let mut a = Adam::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        a.update(&mut p, &[1.0], 0.1);
        let first = -p[0];
        a.update(&mut p, &[1.0], 0.1);
        let second = -p[0] - first;
        // m̂ = v̂ = 1 on both steps for a constant unit gradient.
        assert!((second - 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        // A smaller second gradient shrinks the step below the first.
        let mut b = Adam::new(1, AdamConfig::default());
        let mut q = vec![0.0];
        b.update(&mut q, &[1.0], 0.1);
        let q1 = q[0];
        b.update(&mut q, &[0.5], 0.1);
        let m = 0.9 * 0.1 + 0.1 * 0.5;
        let v = 0.999 * 0.001 + 0.001 * 0.25;
        let expect = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((q1 - q[0] - expect).abs() < 1e-12);
        assert!(q1 - q[0] < 0.1);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut a = Adam::new(2, AdamConfig::default());
        let mut p = vec![1.0, 1.0];
        assert!(!a.update(&mut p, &[f64::NAN, 1.0], 0.1));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(a.step, 0);
    }
}
