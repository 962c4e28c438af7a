//! Three-dimensional FFTs over power-of-two grids.
//!
//! Conventions used everywhere in the crate:
//! - grids are row-major `[Gx, Gy, Gz]` (z fastest);
//! - the forward transform is unnormalized, the inverse carries `1/V`;
//! - real signals keep only the Hermitian-reduced half spectrum along z,
//!   extent `Gz/2 + 1`.
//!
//! The inverse of a half spectrum is defined as the real part of the inverse
//! DFT of its Hermitian extension, which makes it a real-linear map with a
//! well-defined adjoint (see [`rfft3_adjoint`], [`irfft3_adjoint`]).

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, Scalar};

/// Largest grid volume accepted by [`naive_dft3`].
pub const NAIVE_DFT_MAX_VOLUME: usize = 16 * 16 * 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Grid3 {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Grid3 {
    pub fn new(x: usize, y: usize, z: usize) -> Result<Self> {
        let g = Self { x, y, z };
        for (axis, n) in [("x", x), ("y", y), ("z", z)] {
            if n == 0 || !n.is_power_of_two() {
                return Err(Error::Shape(format!(
                    "FFT grid {axis}-extent {n} is not a power of two; choose a patch size P so that \
                     every post-backbone extent divided by P is a power of two"
                )));
            }
        }
        Ok(g)
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn volume(&self) -> usize {
        self.x * self.y * self.z
    }

    /// Extent of the reduced z axis.
    pub fn half_z(&self) -> usize {
        self.z / 2 + 1
    }

    pub fn half_volume(&self) -> usize {
        self.x * self.y * self.half_z()
    }

    /// Multiplicity of half-spectrum bin `kz` in the full spectrum.
    pub fn hermitian_weight(&self, kz: usize) -> usize {
        if kz == 0 || (self.z % 2 == 0 && kz == self.z / 2) {
            1
        } else {
            2
        }
    }
}

/// Radix-2 plan for one transform length.
struct Fft1<T> {
    n: usize,
    twiddle: Vec<Complex<T>>,
    rev: Vec<usize>,
}

impl<T: Scalar> Fft1<T> {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddle = (0..n / 2)
            .map(|k| {
                let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::c(ang.cos()), T::c(ang.sin()))
            })
            .collect();
        Self { n, twiddle, rev }
    }

    /// In-place unnormalized transform; `inverse` flips the exponent sign.
    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let mut w = self.twiddle[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + len / 2] * w;
                    buf[start + k] = a + b;
                    buf[start + k + len / 2] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

struct Plan3<T> {
    grid: Grid3,
    fx: Fft1<T>,
    fy: Fft1<T>,
    fz: Fft1<T>,
}

impl<T: Scalar> Plan3<T> {
    fn new(grid: Grid3) -> Self {
        Self { grid, fx: Fft1::new(grid.x), fy: Fft1::new(grid.y), fz: Fft1::new(grid.z) }
    }

    /// FFT along x and y of a half-spectrum buffer `[Gx][Gy][Hz]`.
    fn xy_pass(&self, data: &mut [Complex<T>], inverse: bool) {
        let Grid3 { x: gx, y: gy, .. } = self.grid;
        let hz = self.grid.half_z();
        let mut line = vec![Complex::default(); gx.max(gy)];
        for ix in 0..gx {
            for kz in 0..hz {
                for iy in 0..gy {
                    line[iy] = data[(ix * gy + iy) * hz + kz];
                }
                self.fy.run(&mut line[..gy], inverse);
                for iy in 0..gy {
                    data[(ix * gy + iy) * hz + kz] = line[iy];
                }
            }
        }
        for iy in 0..gy {
            for kz in 0..hz {
                for ix in 0..gx {
                    line[ix] = data[(ix * gy + iy) * hz + kz];
                }
                self.fx.run(&mut line[..gx], inverse);
                for ix in 0..gx {
                    data[(ix * gy + iy) * hz + kz] = line[ix];
                }
            }
        }
    }

    fn forward(&self, x: &[T]) -> Vec<Complex<T>> {
        let Grid3 { x: gx, y: gy, z: gz } = self.grid;
        let hz = self.grid.half_z();
        let mut half = vec![Complex::default(); gx * gy * hz];
        let mut line = vec![Complex::default(); gz];
        for r in 0..gx * gy {
            for (l, &v) in line.iter_mut().zip(&x[r * gz..(r + 1) * gz]) {
                *l = Complex::new(v, T::zero());
            }
            self.fz.run(&mut line, false);
            half[r * hz..(r + 1) * hz].copy_from_slice(&line[..hz]);
        }
        self.xy_pass(&mut half, false);
        half
    }

    fn inverse(&self, mut half: Vec<Complex<T>>) -> Vec<T> {
        let Grid3 { x: gx, y: gy, z: gz } = self.grid;
        let hz = self.grid.half_z();
        self.xy_pass(&mut half, true);
        let scale = T::one() / T::c(self.grid.volume() as f64);
        let mut out = vec![T::zero(); gx * gy * gz];
        let mut line = vec![Complex::default(); gz];
        for r in 0..gx * gy {
            let w = &half[r * hz..(r + 1) * hz];
            for k in 0..gz {
                line[k] = if k < hz { w[k] } else { w[gz - k].conj() };
            }
            self.fz.run(&mut line, true);
            for (o, l) in out[r * gz..(r + 1) * gz].iter_mut().zip(&line) {
                *o = l.re * scale;
            }
        }
        out
    }
}

/// Hermitian-reduced spectrum of `channels` real grids, layout `[channel][kx][ky][kz]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumHalf<T> {
    pub grid: Grid3,
    pub channels: usize,
    pub re: Vec<T>,
    pub im: Vec<T>,
}

impl<T: Scalar> SpectrumHalf<T> {
    pub fn zeros(grid: Grid3, channels: usize) -> Self {
        let n = grid.half_volume() * channels;
        Self { grid, channels, re: vec![T::zero(); n], im: vec![T::zero(); n] }
    }

    fn from_complex(grid: Grid3, channels: usize, data: &[Complex<T>]) -> Self {
        Self {
            grid,
            channels,
            re: data.iter().map(|c| c.re).collect(),
            im: data.iter().map(|c| c.im).collect(),
        }
    }

    fn channel(&self, c: usize) -> Vec<Complex<T>> {
        let hv = self.grid.half_volume();
        (c * hv..(c + 1) * hv).map(|i| Complex::new(self.re[i], self.im[i])).collect()
    }

    fn check(&self) -> Result<()> {
        let want = self.grid.half_volume() * self.channels;
        if self.re.len() != want || self.im.len() != want {
            return Err(Error::Shape(format!(
                "half spectrum buffers ({}, {}) do not match grid {:?} x {} channels",
                self.re.len(),
                self.im.len(),
                self.grid,
                self.channels
            )));
        }
        Ok(())
    }

    /// Hermitian extension of one channel to the full `[Gx, Gy, Gz]` spectrum.
    pub fn full_channel(&self, c: usize) -> ComplexTensor<T> {
        let Grid3 { x: gx, y: gy, z: gz } = self.grid;
        let hz = self.grid.half_z();
        let half = self.channel(c);
        let mut out = ComplexTensor::zeros(&[gx, gy, gz]);
        for kx in 0..gx {
            for ky in 0..gy {
                for kz in 0..gz {
                    let v = if kz < hz {
                        half[(kx * gy + ky) * hz + kz]
                    } else {
                        let (mx, my) = ((gx - kx) % gx, (gy - ky) % gy);
                        half[(mx * gy + my) * hz + (gz - kz)].conj()
                    };
                    let i = (kx * gy + ky) * gz + kz;
                    out.re[i] = v.re;
                    out.im[i] = v.im;
                }
            }
        }
        out
    }
}

fn check_real<T: Scalar>(input: &[T], channels: usize, grid: Grid3) -> Result<()> {
    if input.len() != channels * grid.volume() {
        return Err(Error::Shape(format!(
            "real grid buffer of {} values does not match {channels} channels of {grid:?}",
            input.len()
        )));
    }
    Ok(())
}

/// Forward transform of `channels` real grids (unnormalized).
pub fn rfft3<T: Scalar>(input: &[T], channels: usize, grid: Grid3) -> Result<SpectrumHalf<T>> {
    let grid = Grid3::new(grid.x, grid.y, grid.z)?;
    check_real(input, channels, grid)?;
    let plan = Plan3::new(grid);
    let v = grid.volume();
    let spec: Vec<Complex<T>> = (0..channels)
        .into_par_iter()
        .flat_map_iter(|c| plan.forward(&input[c * v..(c + 1) * v]))
        .collect();
    Ok(SpectrumHalf::from_complex(grid, channels, &spec))
}

/// Inverse transform with `1/V` normalization; always yields a real signal.
pub fn irfft3<T: Scalar>(spectrum: &SpectrumHalf<T>) -> Result<Vec<T>> {
    Grid3::new(spectrum.grid.x, spectrum.grid.y, spectrum.grid.z)?;
    spectrum.check()?;
    let plan = Plan3::new(spectrum.grid);
    Ok((0..spectrum.channels)
        .into_par_iter()
        .flat_map_iter(|c| plan.inverse(spectrum.channel(c)))
        .collect())
}

fn scale_by_weight<T: Scalar>(spec: &mut SpectrumHalf<T>, f: impl Fn(usize) -> T) {
    let hz = spec.grid.half_z();
    for (i, (re, im)) in spec.re.iter_mut().zip(spec.im.iter_mut()).enumerate() {
        let s = f(spec.grid.hermitian_weight(i % hz));
        *re *= s;
        *im *= s;
    }
}

/// Adjoint of [`rfft3`] under the real inner product `Re <a, b>`.
pub fn rfft3_adjoint<T: Scalar>(spectrum: &SpectrumHalf<T>) -> Result<Vec<T>> {
    let mut s = spectrum.clone();
    let v = T::c(s.grid.volume() as f64);
    scale_by_weight(&mut s, |w| v / T::c(w as f64));
    irfft3(&s)
}

/// Adjoint of [`irfft3`] under the real inner product.
pub fn irfft3_adjoint<T: Scalar>(input: &[T], channels: usize, grid: Grid3) -> Result<SpectrumHalf<T>> {
    let mut s = rfft3(input, channels, grid)?;
    let inv_v = T::one() / T::c(grid.volume() as f64);
    scale_by_weight(&mut s, |w| T::c(w as f64) * inv_v);
    Ok(s)
}

fn naive_guard(grid: Grid3) -> Result<()> {
    if grid.volume() > NAIVE_DFT_MAX_VOLUME {
        return Err(Error::Invalid(format!(
            "naive DFT limited to {NAIVE_DFT_MAX_VOLUME} voxels, grid {grid:?} has {}",
            grid.volume()
        )));
    }
    Ok(())
}

/// Full complex spectrum by the O(V^2) triple-sum definition. Any extents accepted.
pub fn naive_dft3<T: Scalar>(input: &[T], grid: Grid3) -> Result<ComplexTensor<T>> {
    let re: Vec<T> = input.to_vec();
    let im = vec![T::zero(); input.len()];
    naive_dft3_complex(&ComplexTensor::from_parts(&[grid.x, grid.y, grid.z], re, im)?, false)
}

/// Naive forward (or `1/V`-normalized inverse) DFT of a complex grid.
pub fn naive_dft3_complex<T: Scalar>(input: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    let (gx, gy, gz) = (input.shape[0], input.shape[1], input.shape[2]);
    let grid = Grid3 { x: gx, y: gy, z: gz };
    naive_guard(grid)?;
    let sign = if inverse { 1.0 } else { -1.0 };
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = ComplexTensor::zeros(&input.shape);
    for kx in 0..gx {
        for ky in 0..gy {
            for kz in 0..gz {
                let (mut sr, mut si) = (0.0f64, 0.0f64);
                for x in 0..gx {
                    for y in 0..gy {
                        for z in 0..gz {
                            let phase = sign
                                * tau
                                * (((kx * x) % gx) as f64 / gx as f64
                                    + ((ky * y) % gy) as f64 / gy as f64
                                    + ((kz * z) % gz) as f64 / gz as f64);
                            let i = (x * gy + y) * gz + z;
                            let (vr, vi) = (input.re[i].to_f64().unwrap(), input.im[i].to_f64().unwrap());
                            let (c, s) = (phase.cos(), phase.sin());
                            sr += vr * c - vi * s;
                            si += vr * s + vi * c;
                        }
                    }
                }
                let norm = if inverse { 1.0 / grid.volume() as f64 } else { 1.0 };
                let o = (kx * gy + ky) * gz + kz;
                out.re[o] = T::c(sr * norm);
                out.im[o] = T::c(si * norm);
            }
        }
    }
    Ok(out)
}

/// Cyclic shift by `floor(extent/2)` along each axis, moving DC to the center.
pub fn fftshift3<T: Copy>(volume: &[T], shape: [usize; 3]) -> Vec<T> {
    let [nx, ny, nz] = shape;
    assert_eq!(volume.len(), nx * ny * nz, "fftshift3 buffer/shape mismatch");
    let mut out = volume.to_vec();
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let (sx, sy, sz) = ((x + nx / 2) % nx, (y + ny / 2) % ny, (z + nz / 2) % nz);
                out[(sx * ny + sy) * nz + sz] = volume[(x * ny + y) * nz + z];
            }
        }
    }
    out
}

/// Saved forward state of a token-grid global filter.
#[derive(Clone, Debug)]
pub struct FilterCache<T> {
    /// Spectrum of the filter input, one entry per (sample, channel).
    pub spectrum: SpectrumHalf<T>,
}

/// Gather channel `d` of sample tokens `[L, D]` into a row-major grid.
/// Token index is x-fastest: `t = x + Gx * (y + Gy * z)`.
fn gather_channel<T: Scalar>(tokens: &[T], dim: usize, d: usize, grid: Grid3, out: &mut [T]) {
    let Grid3 { x: gx, y: gy, z: gz } = grid;
    for x in 0..gx {
        for y in 0..gy {
            for z in 0..gz {
                out[(x * gy + y) * gz + z] = tokens[(x + gx * (y + gy * z)) * dim + d];
            }
        }
    }
}

fn scatter_channel<T: Scalar>(grid_vals: &[T], dim: usize, d: usize, grid: Grid3, tokens: &mut [T]) {
    let Grid3 { x: gx, y: gy, z: gz } = grid;
    for x in 0..gx {
        for y in 0..gy {
            for z in 0..gz {
                tokens[(x + gx * (y + gy * z)) * dim + d] = grid_vals[(x * gy + y) * gz + z];
            }
        }
    }
}

fn check_filter<T: Scalar>(
    tokens_shape: &[usize],
    grid: Grid3,
    k_re: &[T],
    k_im: &[T],
) -> Result<(usize, usize)> {
    if tokens_shape.len() != 3 || tokens_shape[1] != grid.volume() {
        return Err(Error::Shape(format!(
            "global filter expects tokens [N, {}, D] for grid {grid:?}, got {tokens_shape:?}",
            grid.volume()
        )));
    }
    let (n, dim) = (tokens_shape[0], tokens_shape[2]);
    let want = dim * grid.half_volume();
    if k_re.len() != want || k_im.len() != want {
        return Err(Error::Shape(format!(
            "filter has {} coefficients, token grid {grid:?} with D={dim} needs [{dim}, {}, {}, {}]",
            k_re.len(),
            grid.x,
            grid.y,
            grid.half_z()
        )));
    }
    Ok((n, dim))
}

/// `irfft3(K ⊙ rfft3(tokens))` per channel over the token grid.
pub fn global_filter<T: Scalar>(
    tokens: &[T],
    tokens_shape: &[usize],
    grid: Grid3,
    k_re: &[T],
    k_im: &[T],
) -> Result<(Vec<T>, FilterCache<T>)> {
    let grid = Grid3::new(grid.x, grid.y, grid.z)?;
    let (n, dim) = check_filter(tokens_shape, grid, k_re, k_im)?;
    let plan = Plan3::new(grid);
    let (v, hv) = (grid.volume(), grid.half_volume());
    let per: Vec<(Vec<Complex<T>>, Vec<T>)> = (0..n * dim)
        .into_par_iter()
        .map(|nd| {
            let (b, d) = (nd / dim, nd % dim);
            let mut g = vec![T::zero(); v];
            gather_channel(&tokens[b * v * dim..(b + 1) * v * dim], dim, d, grid, &mut g);
            let x = plan.forward(&g);
            let z: Vec<Complex<T>> = x
                .iter()
                .enumerate()
                .map(|(i, &xv)| xv * Complex::new(k_re[d * hv + i], k_im[d * hv + i]))
                .collect();
            (x, plan.inverse(z))
        })
        .collect();
    let mut out = vec![T::zero(); tokens.len()];
    let mut spec = Vec::with_capacity(n * dim * hv);
    for (nd, (x, y)) in per.into_iter().enumerate() {
        let (b, d) = (nd / dim, nd % dim);
        scatter_channel(&y, dim, d, grid, &mut out[b * v * dim..(b + 1) * v * dim]);
        spec.extend(x);
    }
    Ok((out, FilterCache { spectrum: SpectrumHalf::from_complex(grid, n * dim, &spec) }))
}

/// Returns `(d tokens, d K_re, d K_im)`.
pub fn global_filter_backward<T: Scalar>(
    grad_out: &[T],
    tokens_shape: &[usize],
    grid: Grid3,
    k_re: &[T],
    k_im: &[T],
    cache: &FilterCache<T>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (n, dim) = check_filter(tokens_shape, grid, k_re, k_im)?;
    let plan = Plan3::new(grid);
    let (v, hv) = (grid.volume(), grid.half_volume());
    let hz = grid.half_z();
    let inv_v = T::one() / T::c(v as f64);
    let per: Vec<(Vec<T>, Vec<Complex<T>>)> = (0..n * dim)
        .into_par_iter()
        .map(|nd| {
            let (b, d) = (nd / dim, nd % dim);
            let mut g = vec![T::zero(); v];
            gather_channel(&grad_out[b * v * dim..(b + 1) * v * dim], dim, d, grid, &mut g);
            let gs = plan.forward(&g);
            let mut gz = Vec::with_capacity(hv);
            let mut gk = Vec::with_capacity(hv);
            for (i, &gv) in gs.iter().enumerate() {
                let k = Complex::new(k_re[d * hv + i], k_im[d * hv + i]);
                gz.push(k.conj() * gv);
                let x = Complex::new(cache.spectrum.re[nd * hv + i], cache.spectrum.im[nd * hv + i]);
                let w = T::c(grid.hermitian_weight(i % hz) as f64) * inv_v;
                gk.push(x.conj() * gv * w);
            }
            (plan.inverse(gz), gk)
        })
        .collect();
    let mut gx = vec![T::zero(); grad_out.len()];
    let mut gre = vec![T::zero(); k_re.len()];
    let mut gim = vec![T::zero(); k_im.len()];
    for (nd, (gxi, gk)) in per.into_iter().enumerate() {
        let (b, d) = (nd / dim, nd % dim);
        scatter_channel(&gxi, dim, d, grid, &mut gx[b * v * dim..(b + 1) * v * dim]);
        for (i, c) in gk.into_iter().enumerate() {
            gre[d * hv + i] += c.re;
            gim[d * hv + i] += c.im;
        }
    }
    Ok((gx, gre, gim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_and_constant() {
        let g = Grid3::cube(4).unwrap();
        let mut delta = vec![0.0f64; 64];
        delta[0] = 1.0;
        let s = rfft3(&delta, 1, g).unwrap();
        assert!(s.re.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(s.im.iter().all(|&v| v.abs() < 1e-14));
        let c = rfft3(&vec![2.5f64; 64], 1, g).unwrap();
        assert!((c.re[0] - 160.0).abs() < 1e-10);
        assert!(c.re[1..].iter().chain(&c.im).all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn dc_only_inverts_to_constant() {
        let g = Grid3::cube(4).unwrap();
        let mut s = SpectrumHalf::<f64>::zeros(g, 1);
        s.re[0] = 64.0;
        let x = irfft3(&s).unwrap();
        assert!(x.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn non_power_of_two_rejected() {
        let err = Grid3::new(4, 6, 4).unwrap_err().to_string();
        assert!(err.contains("patch size"), "{err}");
        assert!(rfft3(&[0.0f64; 12], 1, Grid3 { x: 3, y: 2, z: 2 }).is_err());
    }

    #[test]
    fn naive_guard_rejects_large() {
        let g = Grid3::cube(32).unwrap();
        assert!(naive_dft3(&vec![0.0f64; g.volume()], g).is_err());
    }

    #[test]
    fn shift_examples() {
        assert_eq!(fftshift3(&['a', 'b', 'c', 'd'], [1, 1, 4]), vec!['c', 'd', 'a', 'b']);
        let v: Vec<u32> = (0..64).collect();
        assert_eq!(fftshift3(&fftshift3(&v, [4, 4, 4]), [4, 4, 4]), v);
        let mut dc = vec![0.0; 27];
        dc[0] = 1.0;
        let s = fftshift3(&dc, [3, 3, 3]);
        assert_eq!(s[(1 * 3 + 1) * 3 + 1], 1.0);
    }

    #[test]
    fn matches_naive_on_mixed_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid3::new(2, 8, 4).unwrap();
        let x: Vec<f64> = (0..g.volume()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = rfft3(&x, 1, g).unwrap().full_channel(0);
        let slow = naive_dft3(&x, g).unwrap();
        for i in 0..g.volume() {
            assert!((fast.re[i] - slow.re[i]).abs() < 1e-12);
            assert!((fast.im[i] - slow.im[i]).abs() < 1e-12);
        }
    }
}
