use std::f64::consts::PI;

use super::{Float, ParamStore, Tensor};
use crate::error::{dim_err, Result};

/// One-cycle learning-rate schedule: linear warmup from `peak/div` to
/// `peak` over the first `warmup_frac` of steps, then cosine decay back
/// to `peak/div`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub div: f64,
}

impl OneCycle {
    pub fn new(peak_lr: f64, total_steps: usize) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_frac: 0.05,
            div: 25.0,
        }
    }

    /// Learning rate for the 1-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let floor = self.peak_lr / self.div;
        let total = self.total_steps.max(1) as f64;
        let warmup = (self.warmup_frac * total).ceil().max(1.0);
        let s = (step.max(1) - 1) as f64;
        if s < warmup {
            floor + (self.peak_lr - floor) * (s / warmup)
        } else {
            let span = (total - warmup).max(1.0);
            let progress = ((s - warmup) / span).min(1.0);
            floor + (self.peak_lr - floor) * 0.5 * (1.0 + (PI * progress).cos())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T = f32> {
    pub config: AdamWConfig,
    pub schedule: OneCycle,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(params: &ParamStore<T>, config: AdamWConfig, schedule: OneCycle) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            schedule,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// Learning rate the next `update` will use.
    pub fn next_lr(&self) -> f64 {
        self.schedule.lr(self.step as usize + 1)
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<f64> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return dim_err(format!(
                "optimizer has {} slots, {} params, {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let lr = self.schedule.lr(self.step as usize);
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let f = T::from_f64_lossy;
        let (b1, b2, eps) = (f(c.beta1), f(c.beta2), f(c.eps));
        let (lr_t, decay) = (f(lr), f(1.0 - lr * c.weight_decay));
        let (bc1, bc2) = (f(bc1), f(bc2));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return dim_err(format!("grad {:?} vs param {:?}", g.shape(), p.shape()));
            }
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, pv) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv = *pv * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|&v| {
            let x = v.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
