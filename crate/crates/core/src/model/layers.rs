//! Parameter registration and tape-level forward functions for every layer.
//!
//! Layers find their parameters by dot-separated name in the tape's store, so
//! the same functions drive training (`f32`) and gradient checks (`f64`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ops::ConvGeom;
use crate::param::{ParamId, ParamStore};
use crate::spectral::Grid3;
use crate::tensor::{Scalar, Tensor};

use super::config::{eca_kernel_size, SFNetConfig};

/// Registers freshly initialized parameters under a name prefix.
pub struct Init<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Init<'_, T> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, decay: bool) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::c(rng.gen_range(-bound..bound)));
        self.store.add(name, t, true, decay)
    }

    fn constant(&mut self, name: &str, shape: &[usize], v: f64, trainable: bool) -> Result<ParamId> {
        self.store.add(name, Tensor::full(shape, T::c(v)), trainable, false)
    }

    pub fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, bias: bool) -> Result<()> {
        self.uniform(&format!("{name}.weight"), &[cout, cin, k, k, k], cin * k * k * k, true)?;
        if bias {
            self.constant(&format!("{name}.bias"), &[cout], 0.0, true)?;
        }
        Ok(())
    }

    pub fn batchnorm(&mut self, name: &str, c: usize) -> Result<()> {
        self.constant(&format!("{name}.gamma"), &[c], 1.0, true)?;
        self.constant(&format!("{name}.beta"), &[c], 0.0, true)?;
        self.constant(&format!("{name}.running_mean"), &[c], 0.0, false)?;
        self.constant(&format!("{name}.running_var"), &[c], 1.0, false)?;
        Ok(())
    }

    pub fn layernorm(&mut self, name: &str, d: usize) -> Result<()> {
        self.constant(&format!("{name}.gamma"), &[d], 1.0, true)?;
        self.constant(&format!("{name}.beta"), &[d], 0.0, true)?;
        Ok(())
    }

    /// `[din, dout]` weight named `name`, no bias.
    pub fn matrix(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        self.uniform(name, &[din, dout], din, true).map(|_| ())
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        self.matrix(&format!("{name}.weight"), din, dout)?;
        self.constant(&format!("{name}.bias"), &[dout], 0.0, true).map(|_| ())
    }

    pub fn attention(&mut self, name: &str, c: usize, cfg: &SFNetConfig) -> Result<()> {
        let k = eca_kernel_size(c);
        self.uniform(&format!("{name}.eca.kernel"), &[k], k, true)?;
        let b = cfg.spatial_attention_branch_channels;
        self.batchnorm(&format!("{name}.spatial.bn"), c)?;
        for d in 1..=3 {
            self.conv(&format!("{name}.spatial.dil{d}"), b, c, 3, true)?;
        }
        self.conv(&format!("{name}.spatial.fuse"), 1, 3 * b, 3, true)?;
        for i in 1..=3 {
            self.constant(&format!("{name}.lambda{i}"), &[1], cfg.lambda_init, true)?;
        }
        Ok(())
    }

    pub fn dense_layer(&mut self, name: &str, cin: usize, cfg: &SFNetConfig) -> Result<()> {
        let mid = cfg.bottleneck_channels();
        self.batchnorm(&format!("{name}.bn1"), cin)?;
        self.conv(&format!("{name}.conv1"), mid, cin, 1, false)?;
        self.attention(&format!("{name}.attn"), mid, cfg)?;
        self.batchnorm(&format!("{name}.bn2"), mid)?;
        self.conv(&format!("{name}.conv2"), cfg.growth_rate, mid, 3, false)
    }

    pub fn transition(&mut self, name: &str, cin: usize, cout: usize) -> Result<()> {
        self.batchnorm(&format!("{name}.bn"), cin)?;
        self.conv(&format!("{name}.conv"), cout, cin, 1, false)
    }

    /// Filter `K` near all-pass: real part `1 + N(0, s)`, imaginary `N(0, s)`.
    pub fn filter(&mut self, name: &str, d: usize, grid: Grid3, std: f64) -> Result<()> {
        let shape = [d, grid.x, grid.y, grid.half_z()];
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("filter_init_std: {e}")))?;
        let rng = &mut *self.rng;
        let re = Tensor::from_fn(&shape, |_| T::c(1.0 + normal.sample(rng)));
        let im = Tensor::from_fn(&shape, |_| T::c(normal.sample(rng)));
        self.store.add(&format!("{name}.real"), re, true, true)?;
        self.store.add(&format!("{name}.imag"), im, true, true)?;
        Ok(())
    }

    pub fn low_rank_mlp(&mut self, name: &str, d: usize, cfg: &SFNetConfig) -> Result<()> {
        let (h, r1, r2) = (cfg.mlp_hidden, cfg.mlp_rank1, cfg.mlp_rank2);
        self.matrix(&format!("{name}.w1"), d, r1)?;
        self.matrix(&format!("{name}.w2"), r1, h)?;
        self.constant(&format!("{name}.b2"), &[h], 0.0, true)?;
        self.matrix(&format!("{name}.w3"), h, r2)?;
        self.matrix(&format!("{name}.w4"), r2, d)?;
        self.constant(&format!("{name}.b4"), &[d], 0.0, true).map(|_| ())
    }

    pub fn freq_block(&mut self, name: &str, d: usize, grid: Grid3, cfg: &SFNetConfig) -> Result<()> {
        if cfg.freq_norms {
            self.layernorm(&format!("{name}.norm1"), d)?;
        }
        self.filter(&format!("{name}.filter"), d, grid, cfg.filter_init_std)?;
        if cfg.freq_norms {
            self.layernorm(&format!("{name}.norm2"), d)?;
        }
        self.low_rank_mlp(&format!("{name}.mlp"), d, cfg)
    }
}

pub(crate) fn id<T: Scalar>(tape: &Tape<'_, T>, name: &str) -> Result<ParamId> {
    tape.store()
        .id(name)
        .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
}

pub(crate) fn param<T: Scalar>(tape: &mut Tape<'_, T>, name: &str) -> Result<Var> {
    let i = id(tape, name)?;
    Ok(tape.param(i))
}

fn opt_param<T: Scalar>(tape: &mut Tape<'_, T>, name: &str) -> Option<Var> {
    tape.store().id(name).map(|i| tape.param(i))
}

pub fn conv<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var, geom: ConvGeom) -> Result<Var> {
    let w = param(tape, &format!("{name}.weight"))?;
    let b = opt_param(tape, &format!("{name}.bias"));
    tape.conv3d(x, w, b, geom)
}

pub fn batchnorm<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var, train: bool) -> Result<Var> {
    let g = id(tape, &format!("{name}.gamma"))?;
    let b = id(tape, &format!("{name}.beta"))?;
    let m = id(tape, &format!("{name}.running_mean"))?;
    let v = id(tape, &format!("{name}.running_var"))?;
    tape.batchnorm(x, g, b, m, v, train)
}

pub fn bn_relu<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var, train: bool) -> Result<Var> {
    let y = batchnorm(tape, name, x, train)?;
    Ok(tape.relu(y))
}

pub fn layernorm<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var) -> Result<Var> {
    let g = param(tape, &format!("{name}.gamma"))?;
    let b = param(tape, &format!("{name}.beta"))?;
    tape.layernorm(x, g, b)
}

/// Channel map `sigmoid(conv1d_k(GAP(F)))`, shape `[N, C, 1, 1, 1]`.
pub fn channel_attention<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, f: Var) -> Result<Var> {
    let pooled = tape.global_avg_pool(f)?;
    let k = param(tape, &format!("{name}.eca.kernel"))?;
    let mixed = tape.conv1d_channels(pooled, k)?;
    Ok(tape.sigmoid(mixed))
}

/// Spatial map from three dilated branches, shape `[N, 1, W, H, D]`.
pub fn spatial_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    f: Var,
    sigmoid: bool,
    train: bool,
) -> Result<Var> {
    let h = bn_relu(tape, &format!("{name}.bn"), f, train)?;
    let mut branches = Vec::with_capacity(3);
    for d in 1..=3 {
        branches.push(conv(tape, &format!("{name}.dil{d}"), h, ConvGeom::new(1, d, d))?);
    }
    let cat = tape.concat(&branches)?;
    let map = conv(tape, &format!("{name}.fuse"), cat, ConvGeom::new(1, 1, 1))?;
    Ok(if sigmoid { tape.sigmoid(map) } else { map })
}

/// `l1 (F ⊙ Ac + F) + l2 (F ⊙ As + F) + l3 F`.
pub fn fuse_attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    f: Var,
    a_c: Var,
    a_s: Var,
    lambdas: [Var; 3],
) -> Result<Var> {
    let fc = tape.mul(f, a_c)?;
    let fc = tape.add(fc, f)?;
    let fs = tape.mul(f, a_s)?;
    let fs = tape.add(fs, f)?;
    let t1 = tape.mul(lambdas[0], fc)?;
    let t2 = tape.mul(lambdas[1], fs)?;
    let t3 = tape.mul(lambdas[2], f)?;
    let s = tape.add(t1, t2)?;
    tape.add(s, t3)
}

pub fn attention<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    f: Var,
    cfg: &SFNetConfig,
    train: bool,
) -> Result<Var> {
    let a_c = channel_attention(tape, name, f)?;
    let a_s = spatial_attention(tape, &format!("{name}.spatial"), f, cfg.use_sigmoid_on_spatial_map, train)?;
    let mut lambdas = [a_c; 3];
    for (i, l) in lambdas.iter_mut().enumerate() {
        *l = param(tape, &format!("{name}.lambda{}", i + 1))?;
    }
    fuse_attention(tape, f, a_c, a_s, lambdas)
}

/// `conv3(relu(bn(A(conv1(relu(bn(x)))))))`: the `g` new channels of one layer.
pub fn dense_layer<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    x: Var,
    cfg: &SFNetConfig,
    train: bool,
) -> Result<Var> {
    let want = tape.store().get(id(tape, &format!("{name}.bn1.gamma"))?).value.numel();
    let got = tape.shape(x)[1];
    if want != got {
        return Err(Error::Shape(format!("{name} registered for {want} input channels, got {got}")));
    }
    let h = bn_relu(tape, &format!("{name}.bn1"), x, train)?;
    let h = conv(tape, &format!("{name}.conv1"), h, ConvGeom::default())?;
    let h = attention(tape, &format!("{name}.attn"), h, cfg, train)?;
    let h = bn_relu(tape, &format!("{name}.bn2"), h, train)?;
    conv(tape, &format!("{name}.conv2"), h, ConvGeom::new(1, 1, 1))
}

pub fn dense_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    mut x: Var,
    cfg: &SFNetConfig,
    train: bool,
) -> Result<Var> {
    for l in 0..cfg.layers_per_block {
        let y = dense_layer(tape, &format!("{name}.layers.{l}"), x, cfg, train)?;
        x = tape.concat(&[x, y])?;
    }
    Ok(x)
}

/// BN-ReLU, 1×1×1 channel compression, then optional 2×2×2 average pooling.
pub fn transition<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    x: Var,
    pool: bool,
    train: bool,
) -> Result<Var> {
    let h = bn_relu(tape, &format!("{name}.bn"), x, train)?;
    let h = conv(tape, &format!("{name}.conv"), h, ConvGeom::default())?;
    if pool {
        tape.avgpool3d(h, 2, 2)
    } else {
        Ok(h)
    }
}

/// Non-overlapping `P³` patches flattened to tokens, then the square projection.
pub fn patch_embed<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var, p: usize) -> Result<Var> {
    let tokens = tape.patchify(x, p)?;
    let w = param(tape, &format!("{name}.weight"))?;
    let b = opt_param(tape, &format!("{name}.bias"));
    tape.linear(tokens, w, b)
}

/// `GELU(x W1 W2 + b2) W3 W4 + b4`.
pub fn low_rank_mlp<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var) -> Result<Var> {
    let w1 = param(tape, &format!("{name}.w1"))?;
    let w2 = param(tape, &format!("{name}.w2"))?;
    let b2 = param(tape, &format!("{name}.b2"))?;
    let w3 = param(tape, &format!("{name}.w3"))?;
    let w4 = param(tape, &format!("{name}.w4"))?;
    let b4 = param(tape, &format!("{name}.b4"))?;
    let h = tape.linear(x, w1, None)?;
    let h = tape.linear(h, w2, Some(b2))?;
    let h = tape.gelu(h);
    let h = tape.linear(h, w3, None)?;
    tape.linear(h, w4, Some(b4))
}

/// Spectral path: `irfft3(K ⊙ rfft3(x))` over the token grid.
pub fn spectral_filter<T: Scalar>(tape: &mut Tape<'_, T>, name: &str, x: Var, grid: Grid3) -> Result<Var> {
    let re = param(tape, &format!("{name}.real"))?;
    let im = param(tape, &format!("{name}.imag"))?;
    tape.global_filter(x, re, im, grid)
}

/// `y = x + filter(norm1(x)); out = y + mlp(norm2(y))`; the norms are skipped
/// when disabled in the config.
pub fn freq_block<T: Scalar>(
    tape: &mut Tape<'_, T>,
    name: &str,
    x: Var,
    grid: Grid3,
    cfg: &SFNetConfig,
) -> Result<Var> {
    let h = if cfg.freq_norms { layernorm(tape, &format!("{name}.norm1"), x)? } else { x };
    let h = spectral_filter(tape, &format!("{name}.filter"), h, grid)?;
    let y = tape.add(x, h)?;
    let h = if cfg.freq_norms { layernorm(tape, &format!("{name}.norm2"), y)? } else { y };
    let h = low_rank_mlp(tape, &format!("{name}.mlp"), h)?;
    tape.add(y, h)
}
