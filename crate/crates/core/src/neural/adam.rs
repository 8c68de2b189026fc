use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{dims, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update. Nothing is modified when a gradient is non-finite.
    pub fn update(&mut self, mut params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(dims(format!(
                "{} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(dims(format!("parameter {i}: shape {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {i}")));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let before = w.clone();
        let mut opt = Adam::new(AdamConfig::default(), &[&w]);
        opt.update(vec![&mut w], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(w, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let cfg = AdamConfig::default();
        let g = 0.37;
        let mut w = Tensor::from_vec(vec![0.0]);
        let mut opt = Adam::new(cfg, &[&w]);
        // Independent scalar recurrence of the bias-corrected update.
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        let mut last_step = 0.0;
        for t in 1..=100 {
            let prev = w.data()[0];
            opt.update(vec![&mut w], &[Tensor::from_vec(vec![g])]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            assert!((w.data()[0] - x).abs() < 1e-15);
            last_step = prev - w.data()[0];
        }
        assert!((last_step - cfg.lr).abs() < 1e-7, "{last_step}");
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut w = Tensor::from_vec(vec![1.0, 2.0]);
        let mut opt = Adam::new(AdamConfig::default(), &[&w]);
        assert!(opt.update(vec![&mut w], &[Tensor::from_vec(vec![f64::NAN, 0.0])]).is_err());
        assert_eq!(opt.step, 0);
        assert_eq!(w.data(), &[1.0, 2.0]);
        assert!(opt.update(vec![&mut w], &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut w = Tensor::from_vec(vec![0.1, 0.2, 0.3]);
            let mut opt = Adam::new(AdamConfig::default(), &[&w]);
            for k in 0..50 {
                let g = Tensor::from_vec(vec![(k as f64).sin(), 0.5, -(k as f64) * 0.01]);
                opt.update(vec![&mut w], &[g]).unwrap();
            }
            w
        };
        assert_eq!(run().data(), run().data());
    }
}
