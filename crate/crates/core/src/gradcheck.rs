//! Central-difference verification of reverse-mode gradients in `f64`.
//!
//! Coordinates whose perturbation changes a discrete branch (a ReLU sign or a
//! max-pool winner) straddle a kink where the finite difference is not a
//! derivative; they are skipped and counted.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::layers::{self, Init};
use crate::model::{SFNet, SFNetConfig};
use crate::ops::{Activation, ConvGeom};
use crate::param::ParamStore;
use crate::spectral::Grid3;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub coords: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to roundoff are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { coords: 32, step: 1e-5, tolerance: 1e-5, floor: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// A scalar function of the trainable parameters of `store` and of `leaves`.
pub type LossFn<'f> = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var> + 'f;

struct Eval {
    loss: f64,
    fingerprint: u64,
}

fn run(store: &ParamStore<f64>, leaves: &[Tensor<f64>], f: &LossFn<'_>) -> Result<(Eval, Option<crate::Gradients<f64>>, Vec<Var>)> {
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let l = tape.value(loss).data()[0];
    let fp = tape.branch_fingerprint();
    let grads = tape.backward(loss)?;
    Ok((Eval { loss: l, fingerprint: fp }, Some(grads), vars))
}

fn eval(store: &ParamStore<f64>, leaves: &[Tensor<f64>], f: &LossFn<'_>) -> Result<Eval> {
    let mut tape = Tape::new(store);
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(Eval { loss: tape.value(loss).data()[0], fingerprint: tape.branch_fingerprint() })
}

enum Target {
    Param(crate::ParamId),
    Leaf(usize),
}

/// Compare analytic and central-difference gradients for every trainable
/// tensor of `store` and every leaf input.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    leaves: &mut [Tensor<f64>],
    f: &LossFn<'_>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (base, grads, vars) = run(store, leaves, f)?;
    let grads = grads.expect("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut targets: Vec<(String, Target, Tensor<f64>)> = Vec::new();
    for (id, p) in store.iter().filter(|(_, p)| p.trainable) {
        let g = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        targets.push((p.name.clone(), Target::Param(id), g));
    }
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(leaves[i].shape()));
        targets.push((format!("input{i}"), Target::Leaf(i), g));
    }
    let h = opts.step;
    let mut tensors = Vec::with_capacity(targets.len());
    for (name, target, analytic) in targets {
        let n = analytic.numel();
        let coords: Vec<usize> = if n <= opts.coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut check = TensorCheck { name, checked: 0, skipped: 0, max_rel_err: 0.0 };
        for j in coords {
            let mut probe = |delta: f64| -> Result<Eval> {
                match target {
                    Target::Param(id) => {
                        let orig = store.get(id).value.data()[j];
                        store.get_mut(id).value.data_mut()[j] = orig + delta;
                        let e = eval(store, leaves, f);
                        store.get_mut(id).value.data_mut()[j] = orig;
                        e
                    }
                    Target::Leaf(i) => {
                        let orig = leaves[i].data()[j];
                        leaves[i].data_mut()[j] = orig + delta;
                        let e = eval(store, leaves, f);
                        leaves[i].data_mut()[j] = orig;
                        e
                    }
                }
            };
            let plus = probe(h)?;
            let minus = probe(-h)?;
            if plus.fingerprint != base.fingerprint || minus.fingerprint != base.fingerprint {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            check.max_rel_err = check.max_rel_err.max(rel);
            check.checked += 1;
        }
        tensors.push(check);
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    let checked: usize = tensors.iter().map(|t| t.checked).sum();
    Ok(GradCheckReport {
        passed: max_rel_err < opts.tolerance && checked > 0,
        tensors,
        max_rel_err,
        tolerance: opts.tolerance,
    })
}

/// Names accepted by [`check_fragment`].
pub const FRAGMENTS: &[&str] = &[
    "linear",
    "conv3d",
    "conv3d-narrow",
    "maxpool",
    "avgpool",
    "gap",
    "batchnorm",
    "layernorm",
    "relu",
    "gelu",
    "sigmoid",
    "concat-mul",
    "conv1d",
    "filter",
    "patchify",
    "cross-entropy",
    "attention",
    "dense-layer",
    "transition",
    "low-rank-mlp",
    "freq-block",
    "sfnet",
];

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Build and check one named network fragment on seeded random data.
pub fn check_fragment(name: &str, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9);
    let mut store = ParamStore::<f64>::new();
    let mut leaves: Vec<Tensor<f64>> = Vec::new();
    let cfg = SFNetConfig { growth_rate: 2, bottleneck_factor: 2, mlp_hidden: 12, mlp_rank1: 3, mlp_rank2: 4, ..SFNetConfig::tiny() };
    let act = |kind: Activation| -> Box<LossFn<'static>> {
        Box::new(move |t: &mut Tape<'_, f64>, v: &[Var]| Ok(t.activation(v[0], kind)))
    };
    let body: Box<LossFn<'_>> = {
        let mut init = Init { store: &mut store, rng: &mut rng };
        match name {
            "linear" => {
                init.linear("fc", 5, 4)?;
                leaves.push(random(&[3, 5], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| {
                    let w = layers::param(t, "fc.weight")?;
                    let b = layers::param(t, "fc.bias")?;
                    t.linear(v[0], w, Some(b))
                })
            }
            "conv3d" => {
                init.conv("c", 6, 3, 3, true)?;
                leaves.push(random(&[2, 3, 5, 5, 5], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::conv(t, "c", v[0], ConvGeom::new(1, 2, 2)))
            }
            "conv3d-narrow" => {
                init.conv("c", 1, 3, 3, true)?;
                leaves.push(random(&[2, 3, 6, 5, 5], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::conv(t, "c", v[0], ConvGeom::new(2, 1, 1)))
            }
            "maxpool" => {
                leaves.push(random(&[2, 2, 6, 6, 6], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| t.maxpool3d(v[0], 3, ConvGeom::new(2, 1, 1)))
            }
            "avgpool" => {
                leaves.push(random(&[2, 2, 4, 6, 4], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| t.avgpool3d(v[0], 2, 2))
            }
            "gap" => {
                leaves.push(random(&[2, 3, 3, 4, 2], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| t.global_avg_pool(v[0]))
            }
            "batchnorm" => {
                init.batchnorm("bn", 3)?;
                perturb_affine(init.store, init.rng, &["bn.gamma", "bn.beta"]);
                leaves.push(random(&[2, 3, 3, 3, 3], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::batchnorm(t, "bn", v[0], true))
            }
            "layernorm" => {
                init.layernorm("ln", 6)?;
                perturb_affine(init.store, init.rng, &["ln.gamma", "ln.beta"]);
                leaves.push(random(&[2, 4, 6], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::layernorm(t, "ln", v[0]))
            }
            "relu" => {
                leaves.push(random(&[4, 8], init.rng));
                act(Activation::Relu)
            }
            "gelu" => {
                leaves.push(random(&[4, 8], init.rng).map(|v| 3.0 * v));
                act(Activation::Gelu)
            }
            "sigmoid" => {
                leaves.push(random(&[4, 8], init.rng).map(|v| 4.0 * v));
                act(Activation::Sigmoid)
            }
            "concat-mul" => {
                leaves.push(random(&[2, 2, 3, 3, 3], init.rng));
                leaves.push(random(&[2, 3, 3, 3, 3], init.rng));
                leaves.push(random(&[2, 5, 1, 1, 1], init.rng));
                leaves.push(random(&[2, 1, 3, 3, 3], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| {
                    let c = t.concat(&[v[0], v[1]])?;
                    let m = t.mul(c, v[2])?;
                    let s = t.add(m, v[3])?;
                    Ok(t.scale(s, 0.7))
                })
            }
            "conv1d" => {
                init.store.add("k", random(&[5], init.rng), true, true)?;
                leaves.push(random(&[2, 7, 1, 1, 1], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| {
                    let k = layers::param(t, "k")?;
                    t.conv1d_channels(v[0], k)
                })
            }
            "filter" => {
                let grid = Grid3::new(4, 2, 4)?;
                init.filter("f", 3, grid, 0.3)?;
                leaves.push(random(&[2, grid.volume(), 3], init.rng));
                Box::new(move |t: &mut Tape<'_, f64>, v: &[Var]| layers::spectral_filter(t, "f", v[0], grid))
            }
            "patchify" => {
                leaves.push(random(&[2, 2, 4, 4, 2], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| {
                    let p = t.patchify(v[0], 2)?;
                    t.mean_tokens(p)
                })
            }
            "cross-entropy" => {
                leaves.push(random(&[4, 2], init.rng).map(|v| 3.0 * v));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| t.cross_entropy(v[0], &[0, 1, 1, 0]))
            }
            "attention" => {
                init.attention("a", 8, &cfg)?;
                leaves.push(random(&[2, 8, 4, 4, 4], init.rng));
                let c = cfg.clone();
                Box::new(move |t: &mut Tape<'_, f64>, v: &[Var]| layers::attention(t, "a", v[0], &c, true))
            }
            "dense-layer" => {
                init.dense_layer("d", 3, &cfg)?;
                leaves.push(random(&[2, 3, 4, 4, 4], init.rng));
                let c = cfg.clone();
                Box::new(move |t: &mut Tape<'_, f64>, v: &[Var]| layers::dense_layer(t, "d", v[0], &c, true))
            }
            "transition" => {
                init.transition("t", 4, 2)?;
                leaves.push(random(&[2, 4, 4, 4, 4], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::transition(t, "t", v[0], true, true))
            }
            "low-rank-mlp" => {
                init.low_rank_mlp("m", 6, &cfg)?;
                leaves.push(random(&[2, 3, 6], init.rng));
                Box::new(|t: &mut Tape<'_, f64>, v: &[Var]| layers::low_rank_mlp(t, "m", v[0]))
            }
            "freq-block" => {
                let grid = Grid3::cube(2)?;
                init.freq_block("fb", 5, grid, &cfg)?;
                perturb_affine(init.store, init.rng, &["fb.norm1.gamma", "fb.norm1.beta", "fb.norm2.gamma", "fb.norm2.beta"]);
                leaves.push(random(&[2, 8, 5], init.rng));
                let c = cfg.clone();
                Box::new(move |t: &mut Tape<'_, f64>, v: &[Var]| layers::freq_block(t, "fb", v[0], grid, &c))
            }
            "sfnet" => return check_network(&SFNetConfig::tiny(), 1, opts),
            other => {
                return Err(Error::Invalid(format!("unknown fragment {other:?}; expected one of {}", FRAGMENTS.join(", "))))
            }
        }
    };
    // Contract the fragment output with fixed random weights to get a scalar.
    let probe = {
        let mut store_probe = ParamStore::<f64>::new();
        std::mem::swap(&mut store_probe, &mut store);
        let shape = {
            let mut tape = Tape::new(&store_probe);
            let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = body(&mut tape, &vars)?;
            tape.shape(out).to_vec()
        };
        std::mem::swap(&mut store_probe, &mut store);
        random(&shape, &mut rng)
    };
    let f = move |t: &mut Tape<'_, f64>, v: &[Var]| -> Result<Var> {
        let out = body(t, v)?;
        t.weighted_sum(out, probe.clone())
    };
    grad_check(&mut store, &mut leaves, &f, opts)
}

fn perturb_affine(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, names: &[&str]) {
    for n in names {
        if let Some(p) = store.by_name_mut(n) {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
}

/// Cross-entropy of a whole network on a random training-mode batch.
pub fn check_network(cfg: &SFNetConfig, batch: usize, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut net = SFNet::<f64>::new(cfg.clone(), opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51ed);
    let [w, h, d] = cfg.input_extent;
    let x = random(&[batch, cfg.in_channels, w, h, d], &mut rng);
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();
    let c = cfg.clone();
    let f = move |t: &mut Tape<'_, f64>, _: &[Var]| -> Result<Var> {
        let xv = t.input(x.clone());
        let logits = crate::model::forward(&c, t, xv, true)?;
        t.cross_entropy(logits, &labels)
    };
    grad_check(net.store_mut(), &mut [], &f, opts)
}
