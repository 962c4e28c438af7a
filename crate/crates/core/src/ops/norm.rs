//! Batch normalization over `[N, C, ...]` and layer normalization over the last axis.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Saved state for the batch-norm backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub train: bool,
}

/// Per-channel batch statistics produced by a training-mode forward.
#[derive(Clone, Debug)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!("batchnorm expects [N,C,...], got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// Training mode normalizes with biased batch statistics; evaluation mode uses
/// `running_mean`/`running_var`.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    train: bool,
) -> Result<(Tensor<T>, BnCache<T>, Option<BnBatchStats<T>>)> {
    let (n, c, s) = layout(input.shape())?;
    for p in [gamma, beta, running_mean, running_var] {
        if p.shape() != [c] {
            return Err(Error::Shape(format!(
                "batchnorm parameter {:?} for {c} channels",
                p.shape()
            )));
        }
    }
    let m = n * s;
    if train && m < 2 {
        return Err(Error::Shape(format!(
            "batchnorm training needs at least 2 values per channel, input {:?}",
            input.shape()
        )));
    }
    let x = input.data();
    let eps = T::c(BN_EPS);
    let (mean, var) = if train {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let inv_m = T::one() / T::c(m as f64);
        for ch in 0..c {
            let mut acc = T::zero();
            for b in 0..n {
                acc += x[(b * c + ch) * s..(b * c + ch + 1) * s].iter().copied().sum::<T>();
            }
            let mu = acc * inv_m;
            let mut sq = T::zero();
            for b in 0..n {
                for &v in &x[(b * c + ch) * s..(b * c + ch + 1) * s] {
                    sq += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = sq * inv_m;
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let (g, bt, mu, is) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            let r = (b * c + ch) * s..(b * c + ch + 1) * s;
            for ((o, h), &v) in out[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&x[r]) {
                *h = (v - mu) * is;
                *o = g * *h + bt;
            }
        }
    }
    let stats = train.then_some(BnBatchStats { mean, var });
    Ok((Tensor::new(input.shape(), out)?, BnCache { xhat, inv_std, train }, stats))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, s) = layout(shape).expect("validated in forward");
    let m = T::c((n * s) as f64);
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            let r = (b * c + ch) * s..(b * c + ch + 1) * s;
            for (&g, &h) in gy[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_g += g;
                sum_gx += g * h;
            }
        }
        gg[ch] = sum_gx;
        gb[ch] = sum_g;
        let scale = gamma.data()[ch] * cache.inv_std[ch];
        for b in 0..n {
            let r = (b * c + ch) * s..(b * c + ch + 1) * s;
            for ((d, &g), &h) in gx[r.clone()].iter_mut().zip(&gy[r.clone()]).zip(&cache.xhat[r]) {
                *d = if cache.train {
                    scale * (g - sum_g / m - h * sum_gx / m)
                } else {
                    scale * g
                };
            }
        }
    }
    (
        Tensor::new(shape, gx).expect("bn grad"),
        Tensor::new(&[c], gg).expect("bn grad"),
        Tensor::new(&[c], gb).expect("bn grad"),
    )
}

/// `running = (1 - m) * running + m * batch`, with the biased batch variance.
pub fn update_running<T: Scalar>(running: &mut Tensor<T>, batch: &[T]) {
    let m = T::c(BN_MOMENTUM);
    for (r, &b) in running.data_mut().iter_mut().zip(batch) {
        *r = (T::one() - m) * *r + m * b;
    }
}

#[derive(Clone, Debug)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalize each row over the last axis, then scale and shift.
pub fn layernorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LnCache<T>)> {
    let d = *input.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::Shape(format!(
            "layernorm over {d} features with gamma {:?} / beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps = T::c(LN_EPS);
    let inv_d = T::one() / T::c(d as f64);
    let rows = input.numel() / d;
    let mut out = vec![T::zero(); input.numel()];
    let mut xhat = vec![T::zero(); input.numel()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let x = &input.data()[r * d..(r + 1) * d];
        let mu = x.iter().copied().sum::<T>() * inv_d;
        let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (x[j] - mu) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    Ok((Tensor::new(input.shape(), out)?, LnCache { xhat, inv_std }))
}

pub fn layernorm_backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    cache: &LnCache<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = *shape.last().unwrap();
    let rows = grad_out.numel() / d;
    let dn = T::c(d as f64);
    let mut gx = vec![T::zero(); grad_out.numel()];
    let mut gg = vec![T::zero(); d];
    let mut gb = vec![T::zero(); d];
    for r in 0..rows {
        let gy = &grad_out.data()[r * d..(r + 1) * d];
        let h = &cache.xhat[r * d..(r + 1) * d];
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for j in 0..d {
            let gh = gy[j] * gamma.data()[j];
            s1 += gh;
            s2 += gh * h[j];
            gg[j] += gy[j] * h[j];
            gb[j] += gy[j];
        }
        for j in 0..d {
            let gh = gy[j] * gamma.data()[j];
            gx[r * d + j] = cache.inv_std[r] * (gh - s1 / dn - h[j] * s2 / dn);
        }
    }
    (
        Tensor::new(shape, gx).expect("ln grad"),
        Tensor::new(&[d], gg).expect("ln grad"),
        Tensor::new(&[d], gb).expect("ln grad"),
    )
}
