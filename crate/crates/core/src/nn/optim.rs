use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear ramp from 0 to `lr` over this many steps.
    pub warmup_steps: usize,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
            clip_norm: None,
        }
    }
}

/// Adam with bias-corrected moments and linear warmup.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: usize,
    first: Vec<Option<Vec<S>>>,
    second: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate applied at 1-based step `step`.
    pub fn effective_lr(&self, step: usize) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 {
            self.config.lr
        } else {
            self.config.lr * (step as f64 / w as f64).min(1.0)
        }
    }

    /// Update every parameter that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<()> {
        if let Some((id, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", store.name(id))));
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    S::of(max / norm)
                } else {
                    S::one()
                }
            }
            None => S::one(),
        };
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let bc1 = S::of(1.0 - c.beta1.powi(t));
        let bc2 = S::of(1.0 - c.beta2.powi(t));
        let lr = S::of(self.effective_lr(self.step));
        let eps = S::of(c.eps);
        let n = store.len();
        self.first.resize_with(n, || None);
        self.second.resize_with(n, || None);
        for (id, g) in grads.iter() {
            let p = store.get_mut(id);
            let m = self.first[id.0].get_or_insert_with(|| vec![S::zero(); g.len()]);
            let v = self.second[id.0].get_or_insert_with(|| vec![S::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * clip;
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor};

    fn single(value: f64) -> (ParamStore<f64>, crate::nn::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut store, id) = single(1.0);
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let y = t.scale(x, -3.0);
        let g = t.backward(y).unwrap();
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..Default::default() });
        adam.step(&mut store, &g).unwrap();
        assert!((store.get(id).item() - 1.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = single(0.5);
        let mut g = Gradients::empty(1);
        g.accumulate(id, 1, 1, &[0.0]);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store, &g).unwrap();
        }
        assert_eq!(store.get(id).item(), 0.5);
    }

    #[test]
    fn warmup_is_linear() {
        let adam: Adam<f32> = Adam::new(AdamConfig {
            lr: 1e-4,
            warmup_steps: 4000,
            ..Default::default()
        });
        assert!((adam.effective_lr(2000) - 5e-5).abs() < 1e-15);
        assert_eq!(adam.effective_lr(8000), 1e-4);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let (mut store, id) = single(0.5);
        let mut g = Gradients::empty(1);
        g.accumulate(id, 1, 1, &[f64::NAN]);
        assert!(Adam::new(AdamConfig::default()).step(&mut store, &g).is_err());
    }
}
