//! Patch tokenization: `[N, C, W, H, D]` volumes to `[N, L, C*P^3]` token matrices.
//!
//! Tokens are ordered x-fastest over the patch grid, `t = gx + Gx * (gy + Gy * gz)`;
//! features inside a token are ordered `((c * P + px) * P + py) * P + pz`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Patch-grid extents for a `[N, C, W, H, D]` map, naming the first indivisible axis.
pub fn patch_grid(shape: &[usize], p: usize) -> Result<[usize; 3]> {
    if shape.len() != 5 {
        return Err(Error::Shape(format!("patchify expects [N,C,W,H,D], got {shape:?}")));
    }
    if p == 0 {
        return Err(Error::Invalid("patch size must be positive".into()));
    }
    let mut g = [0; 3];
    for (a, name) in ["W", "H", "D"].iter().enumerate() {
        let n = shape[2 + a];
        if n % p != 0 {
            return Err(Error::Shape(format!(
                "spatial axis {name} extent {n} is not divisible by patch size {p}"
            )));
        }
        g[a] = n / p;
    }
    Ok(g)
}

fn walk(shape: &[usize], p: usize, mut f: impl FnMut(usize, usize)) -> Result<()> {
    let [gx, gy, gz] = patch_grid(shape, p)?;
    let (n, c, w, h, d) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let l = gx * gy * gz;
    let dim = c * p * p * p;
    for b in 0..n {
        for tz in 0..gz {
            for ty in 0..gy {
                for tx in 0..gx {
                    let t = tx + gx * (ty + gy * tz);
                    for ch in 0..c {
                        for px in 0..p {
                            for py in 0..p {
                                for pz in 0..p {
                                    let feat = ((ch * p + px) * p + py) * p + pz;
                                    let (x, y, z) = (tx * p + px, ty * p + py, tz * p + pz);
                                    let vol = (((b * c + ch) * w + x) * h + y) * d + z;
                                    f(vol, (b * l + t) * dim + feat);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn patchify<T: Scalar>(input: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    let [gx, gy, gz] = patch_grid(s, p)?;
    let mut out = vec![T::zero(); input.numel()];
    let x = input.data();
    walk(s, p, |vol, tok| out[tok] = x[vol])?;
    Tensor::new(&[s[0], gx * gy * gz, s[1] * p * p * p], out)
}

/// Inverse of [`patchify`] for a target volume shape.
pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>, volume_shape: &[usize], p: usize) -> Result<Tensor<T>> {
    let numel: usize = volume_shape.iter().product();
    if tokens.numel() != numel {
        return Err(Error::Shape(format!(
            "tokens {:?} cannot fill volume {volume_shape:?}",
            tokens.shape()
        )));
    }
    let mut out = vec![T::zero(); numel];
    let t = tokens.data();
    walk(volume_shape, p, |vol, tok| out[vol] = t[tok])?;
    Tensor::new(volume_shape, out)
}

/// Mean over the token axis: `[N, L, D] -> [N, D]`.
pub fn mean_tokens<T: Scalar>(tokens: &Tensor<T>) -> Result<Tensor<T>> {
    let s = tokens.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("token mean expects [N,L,D], got {s:?}")));
    }
    let (n, l, d) = (s[0], s[1], s[2]);
    let inv = T::one() / T::c(l as f64);
    let mut out = vec![T::zero(); n * d];
    for b in 0..n {
        for t in 0..l {
            let row = &tokens.data()[(b * l + t) * d..(b * l + t + 1) * d];
            out[b * d..(b + 1) * d].iter_mut().zip(row).for_each(|(o, &v)| *o += v);
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(&[n, d], out)
}
