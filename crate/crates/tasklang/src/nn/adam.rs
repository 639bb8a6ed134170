//! Adam with bias correction, keyed by parameter index so optimizer state
//! survives checkpointing.

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, params: &Params) -> Adam {
        let m = params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        let v = params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m, v }
    }

    /// Applies one update. `grads` runs parallel to the parameter list; pass
    /// zero tensors for parameters a step did not touch.
    pub fn step(&mut self, params: &mut Params, grads: &[Tensor]) {
        assert_eq!(grads.len(), params.len(), "gradient list length");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            assert_eq!(p.shape(), g.shape(), "gradient shape for param {i}");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mhat = m.data[k] / b1t;
                let vhat = v.data[k] / b2t;
                p.data[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Params;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut params = Params::new();
        params.add("x", Tensor::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(0.05, &params);
        for _ in 0..500 {
            let x = params.tensor(0).clone();
            let grad = x.map(|v| 2.0 * v);
            opt.step(&mut params, &[grad]);
        }
        for &v in &params.tensor(0).data {
            assert!(v.abs() < 1e-3, "did not converge: {v}");
        }
    }

    #[test]
    fn first_step_size_is_lr_scaled() {
        let mut params = Params::new();
        params.add("x", Tensor::from_vec(1, 1, vec![1.0]));
        let mut opt = Adam::new(0.1, &params);
        opt.step(&mut params, &[Tensor::from_vec(1, 1, vec![0.5])]);
        // With bias correction the first update moves by ~lr regardless of
        // gradient scale.
        assert!((params.tensor(0).data[0] - (1.0 - 0.1)).abs() < 1e-6);
    }
}
