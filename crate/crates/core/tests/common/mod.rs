//! Straight-line reference implementations used as test oracles. They share
//! nothing with the library beyond the `Tensor` container and parameter names.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfnet::{ParamStore, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Move every trainable tensor away from its structured init so that
/// identity-like defaults cannot mask a wrong formula.
pub fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.trainable) {
        let name = p.name.clone();
        for v in p.value.data_mut() {
            *v = if name.ends_with("gamma") {
                rng.gen_range(0.5..1.5)
            } else if name.contains("lambda") {
                rng.gen_range(-1.0..1.0)
            } else {
                *v + rng.gen_range(-0.2..0.2)
            };
        }
    }
}

pub fn param<'a>(store: &'a ParamStore<f64>, name: &str) -> &'a [f64] {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).value.data()
}

fn idx(s: &[usize], n: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
    (((n * s[1] + c) * s[2] + x) * s[3] + y) * s[4] + z
}

/// Stride-1 3D convolution with zero padding and dilation; `w` is
/// `[cout, cin, k, k, k]`.
pub fn conv3d(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, pad: usize, dil: usize) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let (cout, cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(cin, s[1]);
    let o: Vec<usize> = (2..5).map(|a| s[a] + 2 * pad - dil * (k - 1)).collect();
    let os = [s[0], cout, o[0], o[1], o[2]];
    let mut out = Tensor::zeros(&os);
    let xd = x.data();
    let wd = w.data();
    for n in 0..s[0] {
        for co in 0..cout {
            for ox in 0..o[0] {
                for oy in 0..o[1] {
                    for oz in 0..o[2] {
                        let mut acc = bias.map_or(0.0, |b| b[co]);
                        for ci in 0..cin {
                            for a in 0..k {
                                for b in 0..k {
                                    for c in 0..k {
                                        let ix = (ox + a * dil) as isize - pad as isize;
                                        let iy = (oy + b * dil) as isize - pad as isize;
                                        let iz = (oz + c * dil) as isize - pad as isize;
                                        if ix < 0 || iy < 0 || iz < 0 {
                                            continue;
                                        }
                                        let (ix, iy, iz) = (ix as usize, iy as usize, iz as usize);
                                        if ix >= s[2] || iy >= s[3] || iz >= s[4] {
                                            continue;
                                        }
                                        let wi = (((co * cin + ci) * k + a) * k + b) * k + c;
                                        acc += wd[wi] * xd[idx(&s, n, ci, ix, iy, iz)];
                                    }
                                }
                            }
                        }
                        out.data_mut()[idx(&os, n, co, ox, oy, oz)] = acc;
                    }
                }
            }
        }
    }
    out
}

/// Training-mode batch norm over `[N, W, H, D]` per channel, biased variance.
pub fn batchnorm_train(x: &Tensor<f64>, gamma: &[f64], beta: &[f64]) -> Tensor<f64> {
    let s = x.shape().to_vec();
    let per = s[2] * s[3] * s[4];
    let mut out = x.clone();
    for c in 0..s[1] {
        let vals: Vec<f64> = (0..s[0]).flat_map(|n| {
            let start = (n * s[1] + c) * per;
            x.data()[start..start + per].to_vec()
        }).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
        let inv = 1.0 / (v + 1e-5).sqrt();
        for n in 0..s[0] {
            let start = (n * s[1] + c) * per;
            for e in &mut out.data_mut()[start..start + per] {
                *e = gamma[c] * (*e - m) * inv + beta[c];
            }
        }
    }
    out
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh())
}

/// Concatenate along axis 1.
pub fn concat(parts: &[&Tensor<f64>]) -> Tensor<f64> {
    let s = parts[0].shape().to_vec();
    let per = s[2] * s[3] * s[4];
    let c: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut data = Vec::new();
    for n in 0..s[0] {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[n * pc * per..(n + 1) * pc * per]);
        }
    }
    Tensor::new(&[s[0], c, s[2], s[3], s[4]], data).unwrap()
}

/// `l1 (F Ac + F) + l2 (F As + F) + l3 F` with `Ac` of shape `[N, C]` and
/// `As` of shape `[N, W*H*D]`.
pub fn fuse(f: &Tensor<f64>, ac: &[f64], as_: &[f64], l: [f64; 3]) -> Tensor<f64> {
    let s = f.shape().to_vec();
    let per = s[2] * s[3] * s[4];
    let mut out = f.clone();
    for n in 0..s[0] {
        for c in 0..s[1] {
            for v in 0..per {
                let i = (n * s[1] + c) * per + v;
                let x = f.data()[i];
                let a = ac[n * s[1] + c];
                let b = as_[n * per + v];
                out.data_mut()[i] = l[0] * (x * a + x) + l[1] * (x * b + x) + l[2] * x;
            }
        }
    }
    out
}

/// The dual attention module registered under `name`, training mode.
pub fn attention(store: &ParamStore<f64>, name: &str, f: &Tensor<f64>, use_sigmoid: bool) -> Tensor<f64> {
    let s = f.shape().to_vec();
    let per = s[2] * s[3] * s[4];
    // channel branch
    let kernel = param(store, &format!("{name}.eca.kernel"));
    let k = kernel.len();
    let half = (k - 1) / 2;
    let mut ac = vec![0.0; s[0] * s[1]];
    for n in 0..s[0] {
        let pooled: Vec<f64> = (0..s[1])
            .map(|c| f.data()[(n * s[1] + c) * per..(n * s[1] + c + 1) * per].iter().sum::<f64>() / per as f64)
            .collect();
        for c in 0..s[1] {
            let mut acc = 0.0;
            for (j, kj) in kernel.iter().enumerate() {
                let src = c as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < s[1] {
                    acc += kj * pooled[src as usize];
                }
            }
            ac[n * s[1] + c] = sigmoid(acc);
        }
    }
    // spatial branch
    let p = |suffix: &str| param(store, &format!("{name}.spatial.{suffix}"));
    let h = relu(&batchnorm_train(f, p("bn.gamma"), p("bn.beta")));
    let shape_of = |suffix: &str| store.by_name(&format!("{name}.spatial.{suffix}")).unwrap().value.clone();
    let branches: Vec<Tensor<f64>> = (1..=3)
        .map(|d| conv3d(&h, &shape_of(&format!("dil{d}.weight")), Some(p(&format!("dil{d}.bias"))), d, d))
        .collect();
    let cat = concat(&branches.iter().collect::<Vec<_>>());
    let map = conv3d(&cat, &shape_of("fuse.weight"), Some(p("fuse.bias")), 1, 1);
    let as_: Vec<f64> = map.data().iter().map(|&v| if use_sigmoid { sigmoid(v) } else { v }).collect();
    let l = [1, 2, 3].map(|i| param(store, &format!("{name}.lambda{i}"))[0]);
    fuse(f, &ac, &as_, l)
}

/// One dense layer in training mode: the `g` new channels.
pub fn dense_layer(store: &ParamStore<f64>, name: &str, x: &Tensor<f64>, use_sigmoid: bool) -> Tensor<f64> {
    let p = |s: &str| param(store, &format!("{name}.{s}"));
    let w = |s: &str| store.by_name(&format!("{name}.{s}")).unwrap().value.clone();
    let h = relu(&batchnorm_train(x, p("bn1.gamma"), p("bn1.beta")));
    let h = conv3d(&h, &w("conv1.weight"), None, 0, 1);
    let h = attention(store, &format!("{name}.attn"), &h, use_sigmoid);
    let h = relu(&batchnorm_train(&h, p("bn2.gamma"), p("bn2.beta")));
    conv3d(&h, &w("conv2.weight"), None, 1, 1)
}

/// Layer norm over the last axis.
pub fn layernorm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(d) {
        let m = row.iter().sum::<f64>() / d as f64;
        let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / d as f64;
        let inv = 1.0 / (v + 1e-5).sqrt();
        for (j, e) in row.iter_mut().enumerate() {
            *e = gamma[j] * (*e - m) * inv + beta[j];
        }
    }
    out
}

/// `x [rows, din] @ w [din, dout] + b`.
pub fn matmul(x: &[f64], w: &[f64], din: usize, dout: usize, b: Option<&[f64]>) -> Vec<f64> {
    let rows = x.len() / din;
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        for o in 0..dout {
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += x[r * din + i] * w[i * dout + o];
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

/// Filter value at full-spectrum bin `(kx, ky, kz)` from a half spectrum
/// `[D, gx, gy, gz/2+1]`, completing the missing half by conjugate symmetry.
fn filter_bin(re: &[f64], im: &[f64], g: [usize; 3], d: usize, k: [usize; 3]) -> (f64, f64) {
    let hz = g[2] / 2 + 1;
    let base = d * g[0] * g[1] * hz;
    if k[2] < hz {
        let i = base + (k[0] * g[1] + k[1]) * hz + k[2];
        (re[i], im[i])
    } else {
        let i = base + (((g[0] - k[0]) % g[0]) * g[1] + (g[1] - k[1]) % g[1]) * hz + (g[2] - k[2]);
        (re[i], -im[i])
    }
}

/// Global filter by explicit summation over every token pair: the real part of
/// `IDFT(K ⊙ DFT(x))` per channel, token `t = x + gx (y + gy z)`.
pub fn global_filter(tokens: &[f64], n: usize, d: usize, g: [usize; 3], re: &[f64], im: &[f64]) -> Vec<f64> {
    let l = g[0] * g[1] * g[2];
    let coord = |t: usize| [t % g[0], (t / g[0]) % g[1], t / (g[0] * g[1])];
    let phase = |k: [usize; 3], r: [usize; 3]| {
        2.0 * std::f64::consts::PI
            * (0..3).map(|a| (k[a] * r[a]) as f64 / g[a] as f64).sum::<f64>()
    };
    let mut out = vec![0.0; tokens.len()];
    for b in 0..n {
        for c in 0..d {
            let val = |t: usize| tokens[(b * l + t) * d + c];
            let spectrum: Vec<(f64, f64)> = (0..l)
                .map(|kt| {
                    let k = coord(kt);
                    let (mut sr, mut si) = (0.0, 0.0);
                    for t in 0..l {
                        let a = phase(k, coord(t));
                        sr += val(t) * a.cos();
                        si -= val(t) * a.sin();
                    }
                    let (fr, fi) = filter_bin(re, im, g, c, k);
                    (sr * fr - si * fi, sr * fi + si * fr)
                })
                .collect();
            for t in 0..l {
                let r = coord(t);
                let mut acc = 0.0;
                for (kt, &(zr, zi)) in spectrum.iter().enumerate() {
                    let a = phase(coord(kt), r);
                    acc += zr * a.cos() - zi * a.sin();
                }
                out[(b * l + t) * d + c] = acc / l as f64;
            }
        }
    }
    out
}

/// One frequency block: `y = x + filter(ln1 x)`, `out = y + mlp(ln2 y)`.
pub fn freq_block(store: &ParamStore<f64>, name: &str, tokens: &Tensor<f64>, g: [usize; 3], norms: bool) -> Vec<f64> {
    let s = tokens.shape();
    let (n, d) = (s[0], s[2]);
    let p = |suffix: &str| param(store, &format!("{name}.{suffix}"));
    let x = tokens.data();
    let h = if norms { layernorm(x, d, p("norm1.gamma"), p("norm1.beta")) } else { x.to_vec() };
    let h = global_filter(&h, n, d, g, p("filter.real"), p("filter.imag"));
    let y: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
    let h = if norms { layernorm(&y, d, p("norm2.gamma"), p("norm2.beta")) } else { y.clone() };
    let r1 = p("mlp.w1").len() / d;
    let hidden = p("mlp.b2").len();
    let r2 = p("mlp.w4").len() / d;
    let h = matmul(&h, p("mlp.w1"), d, r1, None);
    let h = matmul(&h, p("mlp.w2"), r1, hidden, Some(p("mlp.b2")));
    let h: Vec<f64> = h.into_iter().map(gelu).collect();
    let h = matmul(&h, p("mlp.w3"), hidden, r2, None);
    let h = matmul(&h, p("mlp.w4"), r2, d, Some(p("mlp.b4")));
    y.iter().zip(&h).map(|(a, b)| a + b).collect()
}
