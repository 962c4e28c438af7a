//! AdamW with decoupled weight decay and a per-epoch cosine schedule.

use std::f64::consts::PI;

use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Moment estimates for every trainable parameter of a store.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub hp: AdamWParams,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
    /// Steps taken so far.
    pub t: u64,
    /// Steps skipped because a gradient was not finite.
    pub skipped: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, hp: AdamWParams) -> Self {
        let zeros = |trainable: bool, t: &Tensor<T>| trainable.then(|| Tensor::zeros(t.shape()));
        let m = store.iter().map(|(_, p)| zeros(p.trainable, &p.value)).collect();
        let v = store.iter().map(|(_, p)| zeros(p.trainable, &p.value)).collect();
        Self { hp, m, v, t: 0, skipped: 0 }
    }

    /// Apply one update from the `grad` fields. Returns false, leaving every
    /// parameter untouched, when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> bool {
        if store.iter().any(|(_, p)| p.trainable && !p.grad.all_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        let AdamWParams { beta1, beta2, eps, weight_decay } = self.hp;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (T::c(beta1), T::c(beta2));
        let (one_b1, one_b2) = (T::c(1.0 - beta1), T::c(1.0 - beta2));
        let step = T::c(lr / bc1);
        let inv_bc2 = T::c(1.0 / bc2);
        let eps = T::c(eps);
        for (i, p) in store.iter_mut().enumerate() {
            let (Some(m), Some(v)) = (self.m[i].as_mut(), self.v[i].as_mut()) else { continue };
            let shrink = if p.decay { T::c(1.0 - lr * weight_decay) } else { T::one() };
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..w.len() {
                let mj = b1 * m.data()[j] + one_b1 * g[j];
                let vj = b2 * v.data()[j] + one_b2 * g[j] * g[j];
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                w[j] = w[j] * shrink - step * mj / ((vj * inv_bc2).sqrt() + eps);
            }
        }
        true
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi e / (total - 1))) / 2`; a
/// one-epoch schedule stays at `lr_max`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total <= 1 {
        return lr_max;
    }
    let phase = PI * epoch as f64 / (total - 1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}
