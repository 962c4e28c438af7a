//! Max, average and global-average pooling over `[N, C, W, H, D]` maps.

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::tensor::{Scalar, Tensor};

fn spatial(shape: &[usize], op: &str) -> Result<(usize, [usize; 3])> {
    if shape.len() != 5 {
        return Err(Error::Shape(format!("{op} expects [N,C,W,H,D], got {shape:?}")));
    }
    Ok((shape[0] * shape[1], [shape[2], shape[3], shape[4]]))
}

/// Max pooling with `-inf` padding. Returns the output and, per output cell,
/// the flat spatial index of the winning input cell (first in scan order on ties).
pub fn maxpool3d<T: Scalar>(
    input: &Tensor<T>,
    k: usize,
    geom: ConvGeom,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (planes, [w, h, d]) = spatial(input.shape(), "maxpool3d")?;
    let mut out_ext = [0; 3];
    for (a, &n) in [w, h, d].iter().enumerate() {
        out_ext[a] = geom.out_extent(n, k).ok_or_else(|| {
            Error::Shape(format!("maxpool3d: window k={k} larger than padded extent {n} ({geom:?})"))
        })?;
    }
    let [ow, oh, od] = out_ext;
    let (s, p, dil) = (geom.stride as isize, geom.padding as isize, geom.dilation as isize);
    // Valid input taps for every output position along one axis.
    let taps = |o: usize, n: usize| -> Vec<usize> {
        (0..k)
            .filter_map(|a| {
                let x = o as isize * s - p + a as isize * dil;
                (x >= 0 && x < n as isize).then_some(x as usize)
            })
            .collect()
    };
    let ti: Vec<Vec<usize>> = (0..ow).map(|o| taps(o, w)).collect();
    let tj: Vec<Vec<usize>> = (0..oh).map(|o| taps(o, h)).collect();
    let tl: Vec<Vec<usize>> = (0..od).map(|o| taps(o, d)).collect();
    if ti.iter().chain(&tj).chain(&tl).any(|t| t.is_empty()) {
        return Err(Error::Shape(format!(
            "maxpool3d: some window covers only padding (k={k}, {geom:?}, extent {:?})",
            [w, h, d]
        )));
    }
    let vol = w * h * d;
    let x = input.data();
    let mut out = Vec::with_capacity(planes * ow * oh * od);
    let mut arg = Vec::with_capacity(out.capacity());
    for pl in 0..planes {
        let xs = &x[pl * vol..(pl + 1) * vol];
        for i in &ti {
            for j in &tj {
                for l in &tl {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for &a in i {
                        for &b in j {
                            for &c in l {
                                let idx = (a * h + b) * d + c;
                                if best_idx == usize::MAX || xs[idx] > best {
                                    best = xs[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx as u32);
                }
            }
        }
    }
    let s = input.shape();
    Ok((Tensor::new(&[s[0], s[1], ow, oh, od], out)?, arg))
}

pub fn maxpool3d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let planes = input_shape[0] * input_shape[1];
    let vol: usize = input_shape[2..].iter().product();
    let per = argmax.len() / planes;
    let mut gx = vec![T::zero(); planes * vol];
    for pl in 0..planes {
        for o in 0..per {
            gx[pl * vol + argmax[pl * per + o] as usize] += grad_out.data()[pl * per + o];
        }
    }
    Tensor::new(input_shape, gx).expect("maxpool grad shape")
}

/// Unpadded average pooling with window `k` and stride `stride` (floor semantics).
pub fn avgpool3d<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    let (planes, [w, h, d]) = spatial(input.shape(), "avgpool3d")?;
    let g = ConvGeom::new(stride, 0, 1);
    let ext = |n| {
        g.out_extent(n, k)
            .ok_or_else(|| Error::Shape(format!("avgpool3d: window {k} exceeds extent {n}")))
    };
    let (ow, oh, od) = (ext(w)?, ext(h)?, ext(d)?);
    let scale = T::one() / T::c((k * k * k) as f64);
    let x = input.data();
    let mut out = Vec::with_capacity(planes * ow * oh * od);
    for pl in 0..planes {
        let xs = &x[pl * w * h * d..(pl + 1) * w * h * d];
        for i in 0..ow {
            for j in 0..oh {
                for l in 0..od {
                    let mut acc = T::zero();
                    for a in 0..k {
                        for b in 0..k {
                            for c in 0..k {
                                acc += xs[((i * stride + a) * h + j * stride + b) * d + l * stride + c];
                            }
                        }
                    }
                    out.push(acc * scale);
                }
            }
        }
    }
    let s = input.shape();
    Tensor::new(&[s[0], s[1], ow, oh, od], out)
}

pub fn avgpool3d_backward<T: Scalar>(
    input_shape: &[usize],
    k: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (w, h, d) = (input_shape[2], input_shape[3], input_shape[4]);
    let go = grad_out.shape();
    let (ow, oh, od) = (go[2], go[3], go[4]);
    let planes = input_shape[0] * input_shape[1];
    let scale = T::one() / T::c((k * k * k) as f64);
    let mut gx = vec![T::zero(); planes * w * h * d];
    let gy = grad_out.data();
    for pl in 0..planes {
        let dst = &mut gx[pl * w * h * d..(pl + 1) * w * h * d];
        for i in 0..ow {
            for j in 0..oh {
                for l in 0..od {
                    let g = gy[((pl * ow + i) * oh + j) * od + l] * scale;
                    for a in 0..k {
                        for b in 0..k {
                            for c in 0..k {
                                dst[((i * stride + a) * h + j * stride + b) * d + l * stride + c] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, gx).expect("avgpool grad shape")
}

/// Mean over all spatial positions: `[N,C,W,H,D] -> [N,C,1,1,1]`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (planes, ext) = spatial(input.shape(), "global_avg_pool")?;
    let vol: usize = ext.iter().product();
    let inv = T::one() / T::c(vol as f64);
    let out = input.data().chunks(vol).map(|c| c.iter().copied().sum::<T>() * inv).collect();
    let s = input.shape();
    debug_assert_eq!(planes, s[0] * s[1]);
    Tensor::new(&[s[0], s[1], 1, 1, 1], out)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let vol: usize = input_shape[2..].iter().product();
    let inv = T::one() / T::c(vol as f64);
    let mut gx = Vec::with_capacity(vol * grad_out.numel());
    for &g in grad_out.data() {
        gx.extend(std::iter::repeat(g * inv).take(vol));
    }
    Tensor::new(input_shape, gx).expect("gap grad shape")
}
