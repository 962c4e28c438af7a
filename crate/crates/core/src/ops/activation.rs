use crate::tensor::{Scalar, Tensor};

/// sqrt(2 / pi), the tanh-approximation GELU constant.
pub const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::c(GELU_C) * (x + T::c(GELU_A) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::c(GELU_C);
    let a = T::c(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::c(3.0) * a * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * dinner
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

impl Activation {
    pub fn forward<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.map(relu),
            Activation::Gelu => x.map(gelu),
            Activation::Sigmoid => x.map(sigmoid),
        }
    }

    /// Gradient given the forward input `x` and output `y`.
    pub fn backward<T: Scalar>(self, x: &Tensor<T>, y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        let g = grad_out.data();
        let data: Vec<T> = match self {
            Activation::Relu => x
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                .collect(),
            Activation::Gelu => x.data().iter().zip(g).map(|(&v, &g)| g * gelu_grad(v)).collect(),
            Activation::Sigmoid => {
                y.data().iter().zip(g).map(|(&s, &g)| g * s * (T::one() - s)).collect()
            }
        };
        Tensor::new(x.shape(), data).expect("activation grad shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_values() {
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(relu(2.0f64), 2.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-12);
        assert!(gelu(-10.0f64).abs() < 1e-12);
        assert!(sigmoid(-800.0f64).is_finite() && sigmoid(800.0f64) == 1.0);
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
