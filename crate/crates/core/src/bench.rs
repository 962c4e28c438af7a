//! Mixing-layer microbenchmark: dense self-attention against FFT global
//! filtering, each timed in isolation on random tokens.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{self, Grid3};
use crate::tensor::{matmul_into, Scalar};

/// Smallest wall time accepted for one timing sample.
pub const MIN_SAMPLE_MS: f64 = 50.0;
/// Query rows processed per attention chunk. The score matrix is never
/// materialized in full.
const ROW_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub tokens: usize,
    pub attention_ms: f64,
    pub fft_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub attention_slope: f64,
    pub fft_slope: f64,
}

impl BenchReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("L,attention_ms,fft_ms\n");
        for r in &self.rows {
            text.push_str(&format!("{},{:.6},{:.6}\n", r.tokens, r.attention_ms, r.fft_ms));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Naive single-head self-attention `softmax(Q Kᵀ / √D) V` with `Q, K, V`
/// projected from `x [L, D]`.
pub fn attention_mixing(x: &[f32], l: usize, d: usize, wq: &[f32], wk: &[f32], wv: &[f32]) -> Vec<f32> {
    let mut q = vec![0.0f32; l * d];
    let mut k = vec![0.0f32; l * d];
    let mut v = vec![0.0f32; l * d];
    matmul_into(x, wq, &mut q, l, d, d, false);
    matmul_into(x, wk, &mut k, l, d, d, false);
    matmul_into(x, wv, &mut v, l, d, d, false);
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; l * d];
    let mut scores = vec![0.0f32; ROW_CHUNK * l];
    for start in (0..l).step_by(ROW_CHUNK) {
        let rows = ROW_CHUNK.min(l - start);
        let s = &mut scores[..rows * l];
        // Kᵀ is read through transposed strides.
        f32::gemm(rows, d, l, scale, &q[start * d..], d as isize, 1, &k, 1, d as isize, 0.0, s, l as isize, 1);
        for row in s.chunks_mut(l) {
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                z += *e;
            }
            let inv = 1.0 / z;
            row.iter_mut().for_each(|e| *e *= inv);
        }
        matmul_into(s, &v, &mut out[start * d..(start + rows) * d], rows, l, d, false);
    }
    out
}

/// Global-filter token mixing on a cubic token grid.
pub fn fft_mixing(x: &[f32], grid: Grid3, d: usize, k_re: &[f32], k_im: &[f32]) -> Result<Vec<f32>> {
    Ok(spectral::global_filter(x, &[1, grid.volume(), d], grid, k_re, k_im)?.0)
}

fn cube_side(l: usize) -> Result<usize> {
    let side = (l as f64).cbrt().round() as usize;
    if side * side * side != l || !side.is_power_of_two() {
        return Err(Error::Invalid(format!("token count {l} is not a power-of-two cube")));
    }
    Ok(side)
}

/// Milliseconds per call, repeating the call until one sample spans at least
/// [`MIN_SAMPLE_MS`]; the median over `repeats` samples is returned.
fn time_ms(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let t = Instant::now();
    f()?;
    let once = t.elapsed().as_secs_f64() * 1e3;
    let inner = ((MIN_SAMPLE_MS / once.max(1e-6)).ceil() as usize).max(1);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(t.elapsed().as_secs_f64() * 1e3 / inner as f64);
    }
    samples.sort_by(|a, b| a.total_cmp(b));
    Ok(samples[samples.len() / 2])
}

pub fn bench_mixing(lengths: &[usize], dim: usize, repeats: usize, seed: u64) -> Result<BenchReport> {
    if repeats < 3 {
        return Err(Error::Invalid(format!("repeats must be at least 3, got {repeats}")));
    }
    if lengths.len() < 2 || dim == 0 {
        return Err(Error::Invalid("need at least two token counts and a positive dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weight = |n: usize, s: f32| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-s..s)).collect() };
    let ws = 1.0 / (dim as f32).sqrt();
    let (wq, wk, wv) = (weight(dim * dim, ws), weight(dim * dim, ws), weight(dim * dim, ws));
    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let grid = Grid3::cube(cube_side(l)?)?;
        let x = weight(l * dim, 1.0);
        let hv = dim * grid.half_volume();
        let (k_re, k_im) = (weight(hv, 1.0), weight(hv, 1.0));
        let attention_ms = time_ms(repeats, || {
            std::hint::black_box(attention_mixing(&x, l, dim, &wq, &wk, &wv));
            Ok(())
        })?;
        let fft_ms = time_ms(repeats, || {
            std::hint::black_box(fft_mixing(&x, grid, dim, &k_re, &k_im)?);
            Ok(())
        })?;
        log::info!("L={l}: attention {attention_ms:.3} ms, fft {fft_ms:.3} ms");
        rows.push(BenchRow { tokens: l, attention_ms, fft_ms });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.tokens as f64).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.attention_ms).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.fft_ms).collect();
    Ok(BenchReport { attention_slope: loglog_slope(&ls, &a), fft_slope: loglog_slope(&ls, &f), rows })
}
