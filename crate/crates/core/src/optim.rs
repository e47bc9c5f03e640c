//! Adam on flat parameter slices, shared by the position baseline and the
//! weight optimizer.

use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("adam lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!("adam betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return Err(format!("adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// Bias-corrected Adam state.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Adam { params, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Descends along `grad`: `x -= lr * m̂ / (sqrt(v̂) + eps)`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        assert_eq!(x.len(), self.m.len(), "adam parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "adam gradient length mismatch");
        let AdamParams { lr, beta1, beta2, eps } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr() {
        let mut x = vec![1.0, -2.0, 0.5];
        let g = vec![3.0, -1e-3, 40.0];
        let mut adam = Adam::new(3, AdamParams::with_lr(0.01));
        adam.step(&mut x, &g);
        for (a, b) in x.iter().zip([1.0, -2.0, 0.5]) {
            let d: f64 = a - b;
            assert!(d.abs() <= 0.01 * (1.0 + 1e-6));
            assert!(d.abs() > 0.0099);
        }
        assert!(x[0] < 1.0 && x[1] > -2.0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut x = vec![0.3; 4];
        let mut adam = Adam::new(4, AdamParams::default());
        for _ in 0..10 {
            adam.step(&mut x, &[0.0; 4]);
        }
        assert_eq!(x, vec![0.3; 4]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = vec![2.0, -3.0];
        let mut adam = Adam::new(2, AdamParams::with_lr(0.05));
        for _ in 0..2000 {
            let g = vec![2.0 * x[0], 8.0 * x[1]];
            adam.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "{x:?}");
    }
}
