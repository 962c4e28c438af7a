//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in execution order, so parents always precede children.
//! Parameter nodes borrow their values from a [`ParamStore`]; gradients for
//! them are returned by [`Tape::backward`] keyed by [`ParamId`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::ops::conv::{conv1d_channels_backward, conv3d_backward};
use crate::ops::elementwise::binary_backward;
use crate::ops::linear::linear_backward;
use crate::ops::loss::softmax_cross_entropy_backward;
use crate::ops::norm::{batchnorm_backward, layernorm_backward, BnBatchStats, BnCache, LnCache};
use crate::ops::pool::{avgpool3d_backward, global_avg_pool_backward, maxpool3d_backward};
use crate::ops::{self, Activation, Binary, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::spectral::{self, FilterCache, Grid3};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    Conv3d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    MaxPool { x: Var, argmax: Vec<u32> },
    AvgPool { x: Var, k: usize, stride: usize },
    Gap { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BnCache<T> },
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: LnCache<T> },
    Act { x: Var, kind: Activation },
    Linear { x: Var, w: Var, b: Option<Var> },
    Concat { xs: Vec<Var> },
    Binary { op: Binary, a: Var, b: Var },
    Scale { x: Var, factor: T },
    Conv1dChannels { x: Var, k: Var },
    Filter { x: Var, k_re: Var, k_im: Var, grid: Grid3, cache: FilterCache<T> },
    Patchify { x: Var, p: usize },
    MeanTokens { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    WeightedSum { x: Var, weights: Tensor<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Conv3d { .. } => "conv3d",
            Op::MaxPool { .. } => "maxpool3d",
            Op::AvgPool { .. } => "avgpool3d",
            Op::Gap { .. } => "global_avg_pool",
            Op::BatchNorm { .. } => "batchnorm",
            Op::LayerNorm { .. } => "layernorm",
            Op::Act { .. } => "activation",
            Op::Linear { .. } => "linear",
            Op::Concat { .. } => "concat",
            Op::Binary { .. } => "binary",
            Op::Scale { .. } => "scale",
            Op::Conv1dChannels { .. } => "conv1d_channels",
            Op::Filter { .. } => "global_filter",
            Op::Patchify { .. } => "patchify",
            Op::MeanTokens { .. } => "mean_tokens",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Running-statistic update requested by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BnBatchStats<T>,
}

pub struct Tape<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    bn_updates: Vec<BnUpdate<T>>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a [`Tape::leaf`] variable.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    /// Copy into each parameter's `grad`; unreached trainable parameters get zeros.
    pub fn write_into(&self, store: &mut ParamStore<T>) {
        for (i, p) in store.iter_mut().enumerate() {
            match self.params.get(i).and_then(Option::as_ref) {
                Some(g) => p.grad = g.clone(),
                None => p.grad = Tensor::zeros(p.value.shape()),
            }
        }
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), bn_updates: Vec::new() }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value: Some(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(t), op: Op::Input, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(t), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let trainable = self.store.get(id).trainable;
        self.nodes.push(Node { value: None, op: Op::Param(id), requires_grad: trainable });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate<T>> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let y = ops::conv3d(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(y, Op::Conv3d { x, w, b, geom }, &parents))
    }

    pub fn maxpool3d(&mut self, x: Var, k: usize, geom: ConvGeom) -> Result<Var> {
        let (y, argmax) = ops::maxpool3d(self.value(x), k, geom)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn avgpool3d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let y = ops::avgpool3d(self.value(x), k, stride)?;
        Ok(self.push(y, Op::AvgPool { x, k, stride }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::Gap { x }, &[x]))
    }

    /// Batch norm; in training mode the batch statistics are queued for
    /// [`Tape::take_bn_updates`].
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        train: bool,
    ) -> Result<Var> {
        let (y, cache, stats) = {
            let s = self.store;
            ops::batchnorm(
                self.value(x),
                &s.get(gamma).value,
                &s.get(beta).value,
                &s.get(running_mean).value,
                &s.get(running_var).value,
                train,
            )?
        };
        if let Some(stats) = stats {
            self.bn_updates.push(BnUpdate { mean: running_mean, var: running_var, stats });
        }
        let g = self.param(gamma);
        let b = self.param(beta);
        Ok(self.push(y, Op::BatchNorm { x, gamma: g, beta: b, cache }, &[x, g, b]))
    }

    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (y, cache) = ops::layernorm(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, cache }, &[x, gamma, beta]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = kind.forward(self.value(x));
        self.push(y, Op::Act { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(y, Op::Linear { x, w, b }, &parents))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&vals)?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }, xs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let y = ops::binary(op, self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Binary { op, a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    pub fn conv1d_channels(&mut self, x: Var, k: Var) -> Result<Var> {
        let y = ops::conv1d_channels(self.value(x), self.value(k))?;
        Ok(self.push(y, Op::Conv1dChannels { x, k }, &[x, k]))
    }

    /// Per-channel `irfft3(K ⊙ rfft3(x))` over the token grid of `x: [N, L, D]`.
    pub fn global_filter(&mut self, x: Var, k_re: Var, k_im: Var, grid: Grid3) -> Result<Var> {
        let xs = self.value(x);
        let (y, cache) = spectral::global_filter(
            xs.data(),
            xs.shape(),
            grid,
            self.value(k_re).data(),
            self.value(k_im).data(),
        )?;
        let y = Tensor::new(xs.shape(), y)?;
        Ok(self.push(y, Op::Filter { x, k_re, k_im, grid, cache }, &[x, k_re, k_im]))
    }

    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let y = ops::patchify(self.value(x), p)?;
        Ok(self.push(y, Op::Patchify { x, p }, &[x]))
    }

    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let y = ops::mean_tokens(self.value(x))?;
        Ok(self.push(y, Op::MeanTokens { x }, &[x]))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits; a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            &[logits],
        ))
    }

    /// `sum(x * weights)` with constant weights; a scalar node.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let xs = self.value(x);
        if xs.shape() != weights.shape() {
            return Err(Error::Shape(format!(
                "weighted_sum: {:?} vs weights {:?}",
                xs.shape(),
                weights.shape()
            )));
        }
        let s = xs.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, &[x]))
    }

    /// Hash of every discrete branch taken during the forward pass (ReLU signs,
    /// max-pool winners). Two forwards with equal fingerprints lie on the same
    /// smooth piece of a piecewise-smooth function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act { x, kind: Activation::Relu } => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut param_grads: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, t: Tensor<T>| {
                if self.nodes[v.0].requires_grad {
                    accumulate(&mut grads[v.0], t);
                }
            };
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Input => {}
                Op::Leaf => leaves[i] = Some(g),
                Op::Param(id) => accumulate(&mut param_grads[id.0], g),
                Op::Conv3d { x, w, b, geom } => {
                    let r = conv3d_backward(self.value(*x), self.value(*w), b.is_some(), *geom, &g, needs(*x))?;
                    if let Some(gx) = r.input {
                        send(*x, gx);
                    }
                    send(*w, r.weight);
                    if let (Some(b), Some(gb)) = (b, r.bias) {
                        send(*b, gb);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    send(*x, maxpool3d_backward(self.shape(*x), argmax, &g));
                }
                Op::AvgPool { x, k, stride } => {
                    send(*x, avgpool3d_backward(self.shape(*x), *k, *stride, &g));
                }
                Op::Gap { x } => send(*x, global_avg_pool_backward(self.shape(*x), &g)),
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let (gx, gg, gb) = batchnorm_backward(self.shape(*x), self.value(*gamma), cache, &g);
                    send(*x, gx);
                    send(*gamma, gg);
                    send(*beta, gb);
                }
                Op::LayerNorm { x, gamma, beta, cache } => {
                    let (gx, gg, gb) = layernorm_backward(self.shape(*x), self.value(*gamma), cache, &g);
                    send(*x, gx);
                    send(*gamma, gg);
                    send(*beta, gb);
                }
                Op::Act { x, kind } => {
                    let y = node.value.as_ref().expect("activation output");
                    send(*x, kind.backward(self.value(*x), y, &g));
                }
                Op::Linear { x, w, b } => {
                    let r = linear_backward(self.value(*x), self.value(*w), b.is_some(), &g, needs(*x));
                    if let Some(gx) = r.input {
                        send(*x, gx);
                    }
                    send(*w, r.weight);
                    if let (Some(b), Some(gb)) = (b, r.bias) {
                        send(*b, gb);
                    }
                }
                Op::Concat { xs } => {
                    let sizes: Vec<usize> = xs.iter().map(|&v| self.shape(v)[1]).collect();
                    for (v, part) in xs.iter().zip(ops::split_channels(&g, &sizes)?) {
                        send(*v, part);
                    }
                }
                Op::Binary { op, a, b } => {
                    let (ga, gb) = binary_backward(*op, self.value(*a), self.value(*b), &g);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale { x, factor } => send(*x, g.map(|v| v * *factor)),
                Op::Conv1dChannels { x, k } => {
                    let (gx, gk) = conv1d_channels_backward(self.value(*x), self.value(*k), &g)?;
                    send(*x, gx);
                    send(*k, gk);
                }
                Op::Filter { x, k_re, k_im, grid, cache } => {
                    let shape = self.shape(*x).to_vec();
                    let (gx, gre, gim) = spectral::global_filter_backward(
                        g.data(),
                        &shape,
                        *grid,
                        self.value(*k_re).data(),
                        self.value(*k_im).data(),
                        cache,
                    )?;
                    send(*x, Tensor::new(&shape, gx)?);
                    send(*k_re, Tensor::new(self.shape(*k_re), gre)?);
                    send(*k_im, Tensor::new(self.shape(*k_im), gim)?);
                }
                Op::Patchify { x, p } => {
                    let shape = self.shape(*x).to_vec();
                    send(*x, ops::unpatchify(&g, &shape, *p)?);
                }
                Op::MeanTokens { x } => {
                    let s = self.shape(*x).to_vec();
                    let (l, d) = (s[1], s[2]);
                    let inv = T::one() / T::c(l as f64);
                    let gx = Tensor::from_fn(&s, |i| g.data()[(i / (l * d)) * d + i % d] * inv);
                    send(*x, gx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let shape = self.shape(*logits).to_vec();
                    send(*logits, softmax_cross_entropy_backward(&shape, probs, labels, g.data()[0]));
                }
                Op::WeightedSum { x, weights } => {
                    let s = g.data()[0];
                    send(*x, weights.map(|w| w * s));
                }
            }
        }
        Ok(Gradients { params: param_grads, leaves })
    }

    /// One line per node: index, op and output shape.
    pub fn shape_trace(&self) -> String {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !matches!(n.op, Op::Param(_)))
            .map(|(i, n)| format!("  #{i:<4} {:<16} {:?}", n.op.name(), self.value(Var(i)).shape()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_scalar_derivatives() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.scale(x, 3.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[3.0]);

        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreached_params_get_zero_grad() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::scalar(1.0), true, true).unwrap();
        let unused = store.add("b", Tensor::ones(&[3]), true, true).unwrap();
        let grads = {
            let mut tape = Tape::new(&store);
            let av = tape.param(a);
            let y = tape.scale(av, 5.0);
            tape.backward(y).unwrap()
        };
        assert!(grads.param(unused).is_none());
        grads.write_into(&mut store);
        assert_eq!(store.get(a).grad.data(), &[5.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::scalar(3.0), true, true).unwrap();
        let mut tape = Tape::new(&store);
        let v1 = tape.param(a);
        let v2 = tape.param(a);
        let y = tape.mul(v1, v2).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.param(a).unwrap().data(), &[6.0]);
    }
}
