use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Scalar, Tensor};

/// `input[..., Din] @ weight[Din, Dout] + bias[Dout]`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let din = *input.shape().last().unwrap();
    let ws = weight.shape();
    if ws.len() != 2 || ws[0] != din {
        return Err(Error::Shape(format!(
            "linear: input {:?} does not match weight {ws:?}",
            input.shape()
        )));
    }
    let dout = ws[1];
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(Error::Shape(format!("linear: bias {:?} for {dout} outputs", b.shape())));
        }
    }
    let rows = input.numel() / din;
    let mut out = vec![T::zero(); rows * dout];
    matmul_into(input.data(), weight.data(), &mut out, rows, din, dout, false);
    if let Some(b) = bias {
        for row in out.chunks_mut(dout) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::new(&shape, out)
}

pub struct LinearGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> LinearGrads<T> {
    let din = weight.shape()[0];
    let dout = weight.shape()[1];
    let rows = input.numel() / din;
    let gy = grad_out.data();
    // dW[Din,Dout] = X^T dY
    let mut gw = vec![T::zero(); din * dout];
    T::gemm(
        din,
        rows,
        dout,
        T::one(),
        input.data(),
        1,
        din as isize,
        gy,
        dout as isize,
        1,
        T::zero(),
        &mut gw,
        dout as isize,
        1,
    );
    let gx = need_input.then(|| {
        // dX[rows,Din] = dY W^T
        let mut gx = vec![T::zero(); rows * din];
        T::gemm(
            rows,
            dout,
            din,
            T::one(),
            gy,
            dout as isize,
            1,
            weight.data(),
            1,
            dout as isize,
            T::zero(),
            &mut gx,
            din as isize,
            1,
        );
        Tensor::new(input.shape(), gx).expect("linear grad")
    });
    let gb = with_bias.then(|| {
        let mut gb = vec![T::zero(); dout];
        for row in gy.chunks(dout) {
            gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        Tensor::new(&[dout], gb).expect("linear grad")
    });
    LinearGrads { input: gx, weight: Tensor::new(weight.shape(), gw).expect("linear grad"), bias: gb }
}
