use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N, K]` logits, log-sum-exp stabilized.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<T> {
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

/// Mean cross-entropy and the softmax probabilities needed for backward.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Vec<T>)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape(format!(
            "cross entropy: logits {s:?} for {} labels",
            labels.len()
        )));
    }
    let k = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        total += lse - row[label];
    }
    Ok((total / T::c(labels.len() as f64), softmax_rows(logits)))
}

/// `(softmax - onehot) / N`, scaled by the upstream gradient of the loss.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    shape: &[usize],
    probs: &[T],
    labels: &[usize],
    upstream: T,
) -> Tensor<T> {
    let k = shape[1];
    let inv_n = upstream / T::c(labels.len() as f64);
    let mut g = probs.to_vec();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] -= T::one();
    }
    g.iter_mut().for_each(|v| *v *= inv_n);
    Tensor::new(shape, g).expect("ce grad")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_confident() {
        let z = Tensor::<f64>::new(&[1, 2], vec![0.0, 0.0]).unwrap();
        let (l, _) = softmax_cross_entropy(&z, &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let c = Tensor::<f64>::new(&[1, 2], vec![10.0, -10.0]).unwrap();
        assert!(softmax_cross_entropy(&c, &[0]).unwrap().0 < 1e-4);
        let huge = Tensor::<f32>::new(&[1, 2], vec![1000.0, -1000.0]).unwrap();
        assert!(softmax_cross_entropy(&huge, &[1]).unwrap().0.is_finite());
    }

    #[test]
    fn gradient_matches_differences() {
        let base = vec![0.3, -1.2, 2.0, 0.1, -0.4, 0.9];
        let labels = [1, 0, 1];
        let z = Tensor::<f64>::new(&[3, 2], base.clone()).unwrap();
        let (_, p) = softmax_cross_entropy(&z, &labels).unwrap();
        let g = softmax_cross_entropy_backward(z.shape(), &p, &labels, 1.0);
        let h = 1e-5;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let lu = softmax_cross_entropy(&Tensor::new(&[3, 2], up).unwrap(), &labels).unwrap().0;
            let ld = softmax_cross_entropy(&Tensor::new(&[3, 2], dn).unwrap(), &labels).unwrap().0;
            let fd = (lu - ld) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-6 * g.data()[i].abs().max(1e-3));
        }
    }
}
