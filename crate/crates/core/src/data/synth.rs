//! Synthetic two-class volumes: a smoothed unit-intensity blob with a central
//! low-intensity cavity whose radius depends on the class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub extent: [usize; 3],
    /// Mean cavity radius of class A (label 0), in voxels.
    pub radius_a: f64,
    /// Mean cavity radius of class B (label 1).
    pub radius_b: f64,
    /// Radius jitter; draws are truncated to `mean ± 1.5 σ`.
    pub radius_sigma: f64,
    /// Blob radius as a fraction of the smallest extent.
    pub blob_fraction: f64,
    /// Gaussian smoothing width in voxels; 0 disables smoothing.
    pub smoothing: f64,
    pub noise: f64,
    /// Maximum translation of the whole pattern per axis, in voxels.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            extent: [32, 32, 32],
            radius_a: 4.0,
            radius_b: 5.0,
            radius_sigma: 0.3,
            blob_fraction: 0.42,
            smoothing: 1.0,
            noise: 0.1,
            jitter: 2.0,
            seed: 0,
        }
    }
}

/// Truncation half-width of the radius draw, in units of `radius_sigma`.
const RADIUS_TRUNCATION: f64 = 1.5;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.extent.iter().any(|&n| n == 0) {
            return Err(Error::Invalid(format!("volume extent {:?} must be positive", self.extent)));
        }
        if self.radius_b - self.radius_a <= 2.0 * RADIUS_TRUNCATION * self.radius_sigma {
            return Err(Error::Invalid(format!(
                "class radius ranges overlap: {} and {} with sigma {}",
                self.radius_a, self.radius_b, self.radius_sigma
            )));
        }
        if self.radius_sigma < 0.0 || self.smoothing < 0.0 || self.noise < 0.0 || self.jitter < 0.0 {
            return Err(Error::Invalid("spread parameters must be non-negative".into()));
        }
        Ok(())
    }

    /// Independent stream for volume `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

fn radius(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mean;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    loop {
        let d: f64 = normal.sample(rng);
        if d.abs() <= RADIUS_TRUNCATION * sigma {
            return mean + d;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with zero padding on a `[nx, ny, nz]` volume.
pub fn smooth(v: &mut [f64], extent: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let [nx, ny, nz] = extent;
    let strides = [ny * nz, nz, 1];
    for axis in 0..3 {
        let n = extent[axis];
        let st = strides[axis];
        let mut line = vec![0.0; n];
        for base in 0..nx * ny * nz {
            // Visit each line once, from its first element.
            let coord = (base / st) % n;
            if coord != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = v[base + i * st];
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (t, &w) in k.iter().enumerate() {
                    let j = i as isize + t as isize - r;
                    if j >= 0 && (j as usize) < n {
                        acc += w * line[j as usize];
                    }
                }
                v[base + i * st] = acc;
            }
        }
    }
}

/// One volume in `[nx, ny, nz]` layout (z fastest).
pub fn generate_volume(spec: &SynthSpec, label: u8, index: u64) -> Tensor<f32> {
    let mut rng = spec.rng(index);
    let [nx, ny, nz] = spec.extent;
    let mean = if label == 1 { spec.radius_b } else { spec.radius_a };
    let cavity = radius(&mut rng, mean, spec.radius_sigma);
    let shift: [f64; 3] = std::array::from_fn(|_| {
        if spec.jitter > 0.0 {
            rng.gen_range(-spec.jitter..=spec.jitter)
        } else {
            0.0
        }
    });
    let center: [f64; 3] = std::array::from_fn(|a| (spec.extent[a] as f64 - 1.0) / 2.0 + shift[a]);
    let blob = spec.blob_fraction * nx.min(ny).min(nz) as f64;
    let mut v = vec![0.0; nx * ny * nz];
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                v[(x * ny + y) * nz + z] = if r <= blob && r > cavity { 1.0 } else { 0.0 };
            }
        }
    }
    smooth(&mut v, spec.extent, spec.smoothing);
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("finite noise");
        v.iter_mut().for_each(|x| *x += normal.sample(&mut rng));
    }
    Tensor::new(&spec.extent, v.into_iter().map(|x| x as f32).collect()).expect("extent matches buffer")
}

/// Voxels below 0.5 within `radius` of the volume center.
pub fn cavity_voxels(volume: &Tensor<f32>, radius: f64) -> usize {
    let s = volume.shape();
    let c: Vec<f64> = s.iter().map(|&n| (n as f64 - 1.0) / 2.0).collect();
    let mut count = 0;
    for x in 0..s[0] {
        for y in 0..s[1] {
            for z in 0..s[2] {
                let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (z as f64 - c[2]).powi(2);
                if d2 <= radius * radius && volume.data()[(x * s[1] + y) * s[2] + z] < 0.5 {
                    count += 1;
                }
            }
        }
    }
    count
}
