//! Adam with decoupled options for clipping and weight decay, and the
//! inverse square-root warm-up schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Mat};
use crate::params::ParamStore;

/// `base_lr * min(step^-0.5, step * warmup^-1.5)`; `step` is clamped to 1.
pub fn lr_schedule(step: usize, base_lr: f64, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    base_lr * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables.
    pub clip_norm: f64,
    /// L2 penalty folded into the gradient; `0` disables.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 0.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    pub t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.iter().map(|(_, _, p)| Mat::zeros(p.dim())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update with learning rate `lr`. Gradients are scaled by `scale`
    /// first (e.g. `1/n` for a mean over accumulated items).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64, scale: f64) {
        self.t += 1;
        let c = self.config;
        let clip = if c.clip_norm > 0.0 {
            let norm = grads
                .grads
                .iter()
                .flatten()
                .map(|g| g.iter().map(|v| (v * scale).powi(2)).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > c.clip_norm {
                c.clip_norm / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.value_mut(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * scale * clip + c.weight_decay * *p;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + c.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let base = 1.0;
        assert!((lr_schedule(4000, base, 4000) - 4000f64.powf(-0.5)).abs() < 1e-15);
        assert!((lr_schedule(1, base, 4000) - 3.9528e-6).abs() < 1e-9);
        let peak = (1..10000).max_by(|&a, &b| lr_schedule(a, base, 4000).total_cmp(&lr_schedule(b, base, 4000)));
        assert_eq!(peak, Some(4000));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("x", Mat::from_elem((1, 1), 3.0));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..2000 {
            let x = store.value(id)[[0, 0]];
            let grads = Gradients {
                grads: vec![Some(Mat::from_elem((1, 1), 2.0 * (x - 1.0)))],
            };
            adam.step(&mut store, &grads, 0.01, 1.0);
        }
        assert!((store.value(id)[[0, 0]] - 1.0).abs() < 1e-3);
    }
}
