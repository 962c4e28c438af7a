//! Broadcasting add/mul, channel concatenation and its inverse split.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, broadcast_strides, Scalar, Tensor};

fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out.len();
    let numel: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ia, ib);
        // odometer increment
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += sa[ax];
            ib += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            ia -= sa[ax] * out[ax];
            ib -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

pub fn binary<T: Scalar>(op: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = broadcast_shape(a.shape(), b.shape())?;
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| match op {
                Binary::Add => x + y,
                Binary::Mul => x * y,
            })
            .collect();
        return Tensor::new(&out, data);
    }
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); out.iter().product()];
    let (da, db) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, ia, ib| {
        data[o] = match op {
            Binary::Add => da[ia] + db[ib],
            Binary::Mul => da[ia] * db[ib],
        };
    });
    Tensor::new(&out, data)
}

/// Gradients of a broadcasting binary op, reduced back to each operand's shape.
pub fn binary_backward<T: Scalar>(
    op: Binary,
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let out = grad_out.shape();
    let sa = broadcast_strides(a.shape(), out);
    let sb = broadcast_strides(b.shape(), out);
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); b.numel()];
    let (da, db, g) = (a.data(), b.data(), grad_out.data());
    for_each_broadcast(out, &sa, &sb, |o, ia, ib| match op {
        Binary::Add => {
            ga[ia] += g[o];
            gb[ib] += g[o];
        }
        Binary::Mul => {
            ga[ia] += g[o] * db[ib];
            gb[ib] += g[o] * da[ia];
        }
    });
    (
        Tensor::new(a.shape(), ga).expect("broadcast grad"),
        Tensor::new(b.shape(), gb).expect("broadcast grad"),
    )
}

/// Concatenate along axis 1.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
    let s0 = first.shape();
    if s0.len() < 2 {
        return Err(Error::Shape(format!("concat needs [N,C,...], got {s0:?}")));
    }
    for t in inputs {
        let s = t.shape();
        if s.len() != s0.len() || s[0] != s0[0] || s[2..] != s0[2..] {
            return Err(Error::Shape(format!("cannot concat {s:?} with {s0:?} along channels")));
        }
    }
    let n = s0[0];
    let inner: usize = s0[2..].iter().product();
    let c_total: usize = inputs.iter().map(|t| t.shape()[1]).sum();
    let mut data = Vec::with_capacity(n * c_total * inner);
    for b in 0..n {
        for t in inputs {
            let c = t.shape()[1];
            data.extend_from_slice(&t.data()[b * c * inner..(b + 1) * c * inner]);
        }
    }
    let mut shape = s0.to_vec();
    shape[1] = c_total;
    Tensor::new(&shape, data)
}

/// Split along axis 1 into pieces of the given channel counts.
pub fn split_channels<T: Scalar>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = input.shape();
    if sizes.iter().sum::<usize>() != s[1] {
        return Err(Error::Shape(format!("split sizes {sizes:?} do not sum to {} channels", s[1])));
    }
    let n = s[0];
    let inner: usize = s[2..].iter().product();
    let mut parts: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(n * c * inner)).collect();
    for b in 0..n {
        let mut off = b * s[1] * inner;
        for (p, &c) in parts.iter_mut().zip(sizes) {
            p.extend_from_slice(&input.data()[off..off + c * inner]);
            off += c * inner;
        }
    }
    parts
        .into_iter()
        .zip(sizes)
        .map(|(data, &c)| {
            let mut shape = s.to_vec();
            shape[1] = c;
            Tensor::new(&shape, data)
        })
        .collect()
}
