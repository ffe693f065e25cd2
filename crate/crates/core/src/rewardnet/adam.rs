//! Adam with decoupled weight decay.

use crate::error::{Error, Result};

use super::NetParams;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl AdamW {
    pub fn new() -> Self {
        Self::default()
    }

    /// Descends `grad` on each `(param, grad)` pair, then shrinks every
    /// parameter by `lr * weight_decay * param`. Nothing changes if any
    /// gradient is non-finite.
    pub fn update(&mut self, tensors: &mut [(&mut [f64], &mut [f64])], lr: f64, weight_decay: f64) -> Result<()> {
        if tensors.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        if self.m.len() != tensors.len() || self.m.iter().zip(tensors.iter()).any(|(m, (p, _))| m.len() != p.len()) {
            self.m = tensors.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
            self.step = 0;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in tensors.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + weight_decay * p[i]);
            }
        }
        Ok(())
    }
}

/// One optimiser step on the network's accumulated gradients. The gradient
/// buffers hold the gradient of the loss to minimise.
pub fn apply_update(params: &mut NetParams, learning_rate: f64, l2_lambda: f64, opt: &mut AdamW) -> Result<()> {
    let mut tensors = params.tensors_mut();
    opt.update(&mut tensors, learning_rate, l2_lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewardnet::init_params;

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = init_params(2);
        let before = p.clone();
        let mut opt = AdamW::new();
        for _ in 0..5 {
            apply_update(&mut p, 1e-2, 0.0, &mut opt).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn converges_on_square() {
        let mut w = [3.0f64];
        let mut g = [0.0f64];
        let mut opt = AdamW::new();
        for _ in 0..500 {
            g[0] = 2.0 * w[0];
            opt.update(&mut [(&mut w[..], &mut g[..])], 0.05, 0.0).unwrap();
        }
        assert!(w[0].abs() <= 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn decay_shrinks_monotonically() {
        let mut p = init_params(4);
        let mut opt = AdamW::new();
        let mut prev: Vec<f64> = p.tensors().concat();
        for _ in 0..10 {
            apply_update(&mut p, 1e-2, 1e-1, &mut opt).unwrap();
            let cur: Vec<f64> = p.tensors().concat();
            for (a, b) in prev.iter().zip(&cur) {
                assert!(b.abs() < a.abs() || (*a == 0.0 && *b == 0.0));
            }
            prev = cur;
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = init_params(4);
        p.head.grad_bias[0] = f64::NAN;
        let before = p.clone();
        let mut opt = AdamW::new();
        assert!(apply_update(&mut p, 1e-2, 1e-4, &mut opt).is_err());
        assert_eq!(p.tensors(), before.tensors());
        assert_eq!(opt.step, 0);
    }
}
