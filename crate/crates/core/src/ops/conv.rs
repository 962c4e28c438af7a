//! 3D convolution (im2col + GEMM, with a direct-summation reference) and the
//! cross-channel 1D convolution used by channel attention.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride, padding, dilation }
    }

    /// Output extent along one axis, `None` if no kernel placement fits.
    pub fn out_extent(&self, n: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        if self.stride == 0 || self.dilation == 0 || n + 2 * self.padding < span {
            return None;
        }
        Some((n + 2 * self.padding - span) / self.stride + 1)
    }
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

struct Dims {
    n: usize,
    cin: usize,
    cout: usize,
    k: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

impl Dims {
    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }
    fn patch(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }
    fn pointwise(&self, g: &ConvGeom) -> bool {
        self.k == 1 && g.stride == 1 && g.padding == 0
    }
}

fn dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, geom: &ConvGeom) -> Result<Dims> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 5 || ws.len() != 5 {
        return Err(Error::Shape(format!(
            "conv3d expects input [N,C,W,H,D] and weight [Cout,Cin,k,k,k], got {is:?} and {ws:?}"
        )));
    }
    if is[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv3d input channels {} (input {is:?}) do not match weight Cin {} (weight {ws:?})",
            is[1], ws[1]
        )));
    }
    if ws[2] != ws[3] || ws[3] != ws[4] {
        return Err(Error::Shape(format!("conv3d kernel must be cubic, got {ws:?}")));
    }
    let k = ws[2];
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = geom.out_extent(is[2 + a], k).ok_or_else(|| {
            Error::Shape(format!(
                "conv3d: axis {a} extent {} admits no kernel placement (k={k}, {geom:?})",
                is[2 + a]
            ))
        })?;
    }
    Ok(Dims { n: is[0], cin: is[1], cout: ws[0], k, inp: [is[2], is[3], is[4]], out })
}

/// Output positions `[lo, hi)` along one axis whose tap at offset `off` lands
/// inside `0..n` for stride `s`.
fn valid_range(n: usize, out: usize, s: usize, off: isize) -> (usize, usize) {
    let s = s as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = if (n as isize) <= off { 0 } else { (n as isize - off + s - 1) / s };
    let hi = hi.clamp(0, out as isize) as usize;
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

/// Visit, for kernel tap `(a, b, c)`, every run of output voxels along the
/// fastest axis whose inputs are in bounds: `f(out_start, in_start, len)`.
/// Consecutive outputs of a run read inputs `stride` apart.
fn tap_runs(d: &Dims, g: &ConvGeom, tap: [usize; 3], mut f: impl FnMut(usize, usize, usize)) {
    let [w, h, dd] = d.inp;
    let [ow, oh, od] = d.out;
    let (s, p, dil) = (g.stride, g.padding as isize, g.dilation as isize);
    let off = tap.map(|t| t as isize * dil - p);
    let (i0, i1) = valid_range(w, ow, s, off[0]);
    let (j0, j1) = valid_range(h, oh, s, off[1]);
    let (l0, l1) = valid_range(dd, od, s, off[2]);
    if l0 >= l1 {
        return;
    }
    for i in i0..i1 {
        let xi = (i * s) as isize + off[0];
        for j in j0..j1 {
            let xj = (j * s) as isize + off[1];
            let xl = (l0 * s) as isize + off[2];
            let src = (xi as usize * h + xj as usize) * dd + xl as usize;
            f((i * oh + j) * od + l0, src, l1 - l0);
        }
    }
}

fn taps(k: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..k).flat_map(move |a| (0..k).flat_map(move |b| (0..k).map(move |c| [a, b, c])))
}

/// Lay out every receptive field of one sample as a column: `[Cin*k^3, out_vol]`.
fn im2col<T: Scalar>(x: &[T], d: &Dims, g: &ConvGeom, cols: &mut [T]) {
    let iv = d.in_vol();
    let ov = d.out_vol();
    let kk = d.k * d.k * d.k;
    let s = g.stride;
    cols.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..d.cin {
        let xc = &x[ci * iv..(ci + 1) * iv];
        for (t, tap) in taps(d.k).enumerate() {
            let dst = &mut cols[(ci * kk + t) * ov..(ci * kk + t + 1) * ov];
            tap_runs(d, g, tap, |o, src, len| {
                if s == 1 {
                    dst[o..o + len].copy_from_slice(&xc[src..src + len]);
                } else {
                    for (q, v) in dst[o..o + len].iter_mut().enumerate() {
                        *v = xc[src + q * s];
                    }
                }
            });
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &Dims, g: &ConvGeom, x: &mut [T]) {
    let iv = d.in_vol();
    let ov = d.out_vol();
    let kk = d.k * d.k * d.k;
    let s = g.stride;
    for ci in 0..d.cin {
        let xc = &mut x[ci * iv..(ci + 1) * iv];
        for (t, tap) in taps(d.k).enumerate() {
            let src_row = &cols[(ci * kk + t) * ov..(ci * kk + t + 1) * ov];
            tap_runs(d, g, tap, |o, src, len| {
                for q in 0..len {
                    xc[src + q * s] += src_row[o + q];
                }
            });
        }
    }
}

/// Narrow outputs skip the column matrix and accumulate shifted input runs.
const DIRECT_MAX_COUT: usize = 4;

fn use_direct(d: &Dims, g: &ConvGeom) -> bool {
    d.cout <= DIRECT_MAX_COUT && !d.pointwise(g)
}

/// `out[co] += w[co, ci, tap] * shift(x[ci])` for one sample.
fn conv_shift_accumulate<T: Scalar>(x: &[T], wt: &[T], d: &Dims, g: &ConvGeom, out: &mut [T]) {
    let (iv, ov, kk) = (d.in_vol(), d.out_vol(), d.k * d.k * d.k);
    let s = g.stride;
    for (t, tap) in taps(d.k).enumerate() {
        tap_runs(d, g, tap, |o, src, len| {
            for co in 0..d.cout {
                let dst = &mut out[co * ov + o..co * ov + o + len];
                for ci in 0..d.cin {
                    let wv = wt[(co * d.cin + ci) * kk + t];
                    let xs = &x[ci * iv + src..];
                    if s == 1 {
                        dst.iter_mut().zip(&xs[..len]).for_each(|(y, &xv)| *y += wv * xv);
                    } else {
                        dst.iter_mut().enumerate().for_each(|(q, y)| *y += wv * xs[q * s]);
                    }
                }
            }
        });
    }
}

/// Weight and (optionally) input gradients of [`conv_shift_accumulate`].
fn conv_shift_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    gy: &[T],
    d: &Dims,
    g: &ConvGeom,
    gw: &mut [T],
    mut gx: Option<&mut [T]>,
) {
    let (iv, ov, kk) = (d.in_vol(), d.out_vol(), d.k * d.k * d.k);
    let s = g.stride;
    for (t, tap) in taps(d.k).enumerate() {
        tap_runs(d, g, tap, |o, src, len| {
            for co in 0..d.cout {
                let gys = &gy[co * ov + o..co * ov + o + len];
                for ci in 0..d.cin {
                    let base = ci * iv + src;
                    let mut acc = T::zero();
                    for (q, &gv) in gys.iter().enumerate() {
                        acc += gv * x[base + q * s];
                    }
                    gw[(co * d.cin + ci) * kk + t] += acc;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = wt[(co * d.cin + ci) * kk + t];
                        for (q, &gv) in gys.iter().enumerate() {
                            gx[base + q * s] += wv * gv;
                        }
                    }
                }
            }
        });
    }
}

pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = dims(input, weight, &geom)?;
    if let Some(b) = bias {
        if b.shape() != [d.cout] {
            return Err(Error::Shape(format!("conv3d bias {:?} for {} outputs", b.shape(), d.cout)));
        }
    }
    let (iv, ov, kk) = (d.in_vol(), d.out_vol(), d.patch());
    let mut out = vec![T::zero(); d.n * d.cout * ov];
    let x = input.data();
    let wt = weight.data();
    out.par_chunks_mut(d.cout * ov).enumerate().for_each(|(n, dst)| {
        let xs = &x[n * d.cin * iv..(n + 1) * d.cin * iv];
        if d.pointwise(&geom) {
            crate::tensor::matmul_into(wt, xs, dst, d.cout, kk, ov, false);
        } else if use_direct(&d, &geom) {
            conv_shift_accumulate(xs, wt, &d, &geom, dst);
        } else {
            let mut cols = vec![T::zero(); kk * ov];
            im2col(xs, &d, &geom, &mut cols);
            crate::tensor::matmul_into(wt, &cols, dst, d.cout, kk, ov, false);
        }
        if let Some(b) = bias {
            for (co, row) in dst.chunks_mut(ov).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::new(&[d.n, d.cout, d.out[0], d.out[1], d.out[2]], out)
}

/// Reference seven-loop summation, used as a test oracle.
pub fn conv3d_direct<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = dims(input, weight, &geom)?;
    let [w, h, dd] = d.inp;
    let [ow, oh, od] = d.out;
    let k = d.k;
    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(d.n * d.cout * d.out_vol());
    for n in 0..d.n {
        for co in 0..d.cout {
            for i in 0..ow {
                for j in 0..oh {
                    for l in 0..od {
                        let mut acc = bias.map_or(T::zero(), |b| b.data()[co]);
                        for ci in 0..d.cin {
                            for a in 0..k {
                                for b in 0..k {
                                    for c in 0..k {
                                        let xi = (i * geom.stride + a * geom.dilation) as isize
                                            - geom.padding as isize;
                                        let xj = (j * geom.stride + b * geom.dilation) as isize
                                            - geom.padding as isize;
                                        let xl = (l * geom.stride + c * geom.dilation) as isize
                                            - geom.padding as isize;
                                        if xi < 0
                                            || xj < 0
                                            || xl < 0
                                            || xi >= w as isize
                                            || xj >= h as isize
                                            || xl >= dd as isize
                                        {
                                            continue;
                                        }
                                        let xv = x[(((n * d.cin + ci) * w + xi as usize) * h
                                            + xj as usize)
                                            * dd
                                            + xl as usize];
                                        let wv = wt[(((co * d.cin + ci) * k + a) * k + b) * k + c];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(&[d.n, d.cout, ow, oh, od], out)
}

pub struct Conv3dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    geom: ConvGeom,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<Conv3dGrads<T>> {
    let d = dims(input, weight, &geom)?;
    let (iv, ov, kk) = (d.in_vol(), d.out_vol(), d.patch());
    let x = input.data();
    let wt = weight.data();
    let gy = grad_out.data();

    let per_sample: Vec<(Vec<T>, Option<Vec<T>>)> = (0..d.n)
        .into_par_iter()
        .map(|n| {
            let xs = &x[n * d.cin * iv..(n + 1) * d.cin * iv];
            let gys = &gy[n * d.cout * ov..(n + 1) * d.cout * ov];
            let mut gw = vec![T::zero(); d.cout * kk];
            if use_direct(&d, &geom) {
                let mut gx = need_input.then(|| vec![T::zero(); d.cin * iv]);
                conv_shift_backward(xs, wt, gys, &d, &geom, &mut gw, gx.as_deref_mut());
                return (gw, gx);
            }
            let pointwise = d.pointwise(&geom);
            let cols_owned;
            let cols: &[T] = if pointwise {
                xs
            } else {
                let mut c = vec![T::zero(); kk * ov];
                im2col(xs, &d, &geom, &mut c);
                cols_owned = c;
                &cols_owned
            };
            // gw^T[K,Cout] = cols[K,P] * gy^T[P,Cout], written through transposed strides
            T::gemm(
                kk,
                ov,
                d.cout,
                T::one(),
                cols,
                ov as isize,
                1,
                gys,
                1,
                ov as isize,
                T::zero(),
                &mut gw,
                1,
                kk as isize,
            );
            let gx = need_input.then(|| {
                // gcols[K,P] = W^T * gy
                let mut gcols = vec![T::zero(); kk * ov];
                T::gemm(
                    kk,
                    d.cout,
                    ov,
                    T::one(),
                    wt,
                    1,
                    kk as isize,
                    gys,
                    ov as isize,
                    1,
                    T::zero(),
                    &mut gcols,
                    ov as isize,
                    1,
                );
                if pointwise {
                    gcols
                } else {
                    let mut gx = vec![T::zero(); d.cin * iv];
                    col2im(&gcols, &d, &geom, &mut gx);
                    gx
                }
            });
            (gw, gx)
        })
        .collect();

    let mut gw = vec![T::zero(); d.cout * kk];
    let mut gx = need_input.then(|| Vec::with_capacity(d.n * d.cin * iv));
    for (pw, px) in per_sample {
        gw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
        if let (Some(all), Some(part)) = (gx.as_mut(), px) {
            all.extend_from_slice(&part);
        }
    }
    let gb = with_bias.then(|| {
        let mut gb = vec![T::zero(); d.cout];
        for n in 0..d.n {
            for (co, acc) in gb.iter_mut().enumerate() {
                let row = &gy[(n * d.cout + co) * ov..(n * d.cout + co + 1) * ov];
                *acc += row.iter().copied().sum::<T>();
            }
        }
        Tensor::new(&[d.cout], gb).expect("bias grad shape")
    });
    Ok(Conv3dGrads {
        input: gx.map(|g| Tensor::new(input.shape(), g).expect("input grad shape")),
        weight: Tensor::new(weight.shape(), gw)?,
        bias: gb,
    })
}

fn check_conv1d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 5 || s[2..] != [1, 1, 1] {
        return Err(Error::Shape(format!("conv1d_channels expects [N,C,1,1,1], got {s:?}")));
    }
    let k = kernel.numel();
    if kernel.rank() != 1 || k % 2 == 0 {
        return Err(Error::Invalid(format!(
            "conv1d_channels needs an odd 1D kernel, got shape {:?}",
            kernel.shape()
        )));
    }
    Ok((s[0], s[1], k))
}

/// `out[c] = sum_j kernel[j] * in[c + j - (k-1)/2]` with zero padding over channels.
pub fn conv1d_channels<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, k) = check_conv1d(input, kernel)?;
    let half = (k - 1) / 2;
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut acc = T::zero();
            for (j, &wj) in w.iter().enumerate() {
                let src = ch as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < c {
                    acc += wj * x[b * c + src as usize];
                }
            }
            out[b * c + ch] = acc;
        }
    }
    Tensor::new(input.shape(), out)
}

pub fn conv1d_channels_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, k) = check_conv1d(input, kernel)?;
    let half = (k - 1) / 2;
    let x = input.data();
    let w = kernel.data();
    let gy = grad_out.data();
    let mut gx = vec![T::zero(); n * c];
    let mut gw = vec![T::zero(); k];
    for b in 0..n {
        for ch in 0..c {
            let g = gy[b * c + ch];
            for j in 0..k {
                let src = ch as isize + j as isize - half as isize;
                if src >= 0 && (src as usize) < c {
                    gx[b * c + src as usize] += w[j] * g;
                    gw[j] += x[b * c + src as usize] * g;
                }
            }
        }
    }
    Ok((Tensor::new(input.shape(), gx)?, Tensor::new(kernel.shape(), gw)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn pointwise_kernel_scales() {
        let x = Tensor::<f32>::ones(&[1, 1, 3, 3, 3]);
        let w = Tensor::new(&[1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv3d(&x, &w, None, ConvGeom::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn dilated_delta_places_reflected_weight() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 5, 5, 5]);
        x.data_mut()[(2 * 5 + 2) * 5 + 2] = 1.0;
        let w = Tensor::from_fn(&[1, 1, 3, 3, 3], |i| i as f64 + 1.0);
        let g = ConvGeom::new(1, 2, 2);
        let y = conv3d(&x, &w, None, g).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5, 5]);
        // Direct-summation oracle over all output voxels.
        let oracle = conv3d_direct(&x, &w, None, g).unwrap();
        assert_eq!(y.data(), oracle.data());
        // Output at center + dil*(1-a) holds weight[a,b,c]: the reflected stencil.
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let (i, j, l) = (2 + 2 * (1 - a as isize), 2 + 2 * (1 - b as isize), 2 + 2 * (1 - c as isize));
                    if [i, j, l].iter().all(|&v| (0..5).contains(&v)) {
                        let got = y.data()[((i * 5 + j) * 5 + l) as usize];
                        assert_eq!(got, w.data()[(a * 3 + b) * 3 + c]);
                    }
                }
            }
        }
        let nonzero = y.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 27);
    }

    #[test]
    fn strided_extent() {
        let x = Tensor::<f32>::zeros(&[1, 1, 8, 8, 8]);
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3]);
        let y = conv3d(&x, &w, None, ConvGeom::new(2, 1, 1)).unwrap();
        assert_eq!(&y.shape()[2..], &[4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3, 3]);
        let err = conv3d(&x, &w, None, ConvGeom::default()).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4, 4]") && err.contains("[1, 3, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn im2col_matches_direct_all_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[2, 3, 6, 5, 7], &mut rng);
        for k in 1..=3 {
            for stride in 1..=2 {
                for padding in 0..=2 {
                    for dilation in 1..=3 {
                        let cout = if dilation == 2 { 6 } else { 2 };
                        let w = rand_tensor(&[cout, 3, k, k, k], &mut rng);
                        let b = rand_tensor(&[cout], &mut rng);
                        let g = ConvGeom::new(stride, padding, dilation);
                        let fast = conv3d(&x, &w, Some(&b), g);
                        let slow = conv3d_direct(&x, &w, Some(&b), g);
                        match (fast, slow) {
                            (Ok(f), Ok(s)) => {
                                assert_eq!(f.shape(), s.shape());
                                for (a, b) in f.data().iter().zip(s.data()) {
                                    assert!((a - b).abs() < 1e-12);
                                }
                            }
                            (Err(_), Err(_)) => {}
                            _ => panic!("paths disagree on validity for {g:?}, k={k}"),
                        }
                    }
                }
            }
        }
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn backward_satisfies_adjoint_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[2, 3, 6, 5, 7], &mut rng);
        for cout in [1, 6] {
            for (k, stride, padding, dilation) in [(3, 1, 1, 1), (3, 2, 1, 1), (3, 1, 3, 3), (1, 1, 0, 1), (2, 2, 0, 1)] {
                let w = rand_tensor(&[cout, 3, k, k, k], &mut rng);
                let g = ConvGeom::new(stride, padding, dilation);
                let y = conv3d(&x, &w, None, g).unwrap();
                let gy = rand_tensor(y.shape(), &mut rng);
                let r = conv3d_backward(&x, &w, false, g, &gy, true).unwrap();
                let lhs = dot(&y, &gy);
                assert!((lhs - dot(&x, r.input.as_ref().unwrap())).abs() < 1e-9 * lhs.abs().max(1.0));
                assert!((lhs - dot(&w, &r.weight)).abs() < 1e-9 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn conv1d_examples() {
        let x = Tensor::<f64>::new(&[1, 4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let id = Tensor::new(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv1d_channels(&x, &id).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let box3 = Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(conv1d_channels(&x, &box3).unwrap().data(), &[3.0, 6.0, 9.0, 7.0]);
        let one = Tensor::new(&[1, 1, 1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(conv1d_channels(&one, &id).unwrap().data(), &[5.0]);
        let even = Tensor::new(&[2], vec![1.0, 1.0]).unwrap();
        assert!(conv1d_channels(&x, &even).is_err());
    }
}
