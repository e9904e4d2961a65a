//! Adam over a flat parameter vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self { config, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update; `rate(i)` is the learning rate of scalar `i`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], rate: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - math::pow(beta1, self.step as f64);
        let c2 = 1.0 - math::pow(beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= rate(i) * m_hat / (math::sqrt(v_hat) + epsilon);
        }
    }

    /// Rebuilds the moment buffers after the parameter vector changed shape.
    /// Each new block of `stride` scalars copies block `source` or starts at zero.
    pub fn remap(&mut self, sources: &[Option<usize>], stride: usize) {
        let mut m = vec![0.0; sources.len() * stride];
        let mut v = vec![0.0; sources.len() * stride];
        for (dst, src) in sources.iter().enumerate() {
            if let Some(s) = *src {
                m[dst * stride..(dst + 1) * stride].copy_from_slice(&self.m[s * stride..(s + 1) * stride]);
                v[dst * stride..(dst + 1) * stride].copy_from_slice(&self.v[s * stride..(s + 1) * stride]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_closed_form() {
        // After bias correction the first step is lr · g / (|g| + ε).
        let mut adam = Adam::new(1, AdamConfig::default());
        let mut p = [1.5];
        adam.update(&mut p, &[0.4], |_| 0.1);
        let expect = 1.5 - 0.1 * 0.4 / (0.4 + 1e-15);
        assert!((p[0] - expect).abs() < 1e-15);
        // Second step by hand.
        adam.update(&mut p, &[-0.2], |_| 0.1);
        let m = 0.9 * 0.1 * 0.4 + 0.1 * -0.2;
        let v = 0.999 * 0.001 * 0.16 + 0.001 * 0.04;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expect2 = expect - 0.1 * m_hat / (v_hat.sqrt() + 1e-15);
        assert!((p[0] - expect2).abs() < 1e-14);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = Adam::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 3.0];
        adam.update(&mut p, &[0.0; 3], |_| 1.0);
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn remap_copies_and_zeroes_blocks() {
        let mut adam = Adam::new(4, AdamConfig::default());
        let mut p = [0.0; 4];
        adam.update(&mut p, &[1.0, 2.0, 3.0, 4.0], |_| 0.1);
        let before = adam.clone();
        adam.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(adam.len(), 6);
        assert_eq!(adam.m[0..2], before.m[2..4]);
        assert_eq!(adam.m[2..4], [0.0, 0.0]);
        assert_eq!(adam.v[4..6], before.v[0..2]);
    }
}
