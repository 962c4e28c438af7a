//! Filter-spectrum visualization: centered magnitude slices as PGM images.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::{fftshift3, Grid3};
use crate::tensor::Scalar;

use super::SFNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Xy,
    Yz,
    Xz,
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "yz" => Ok(Plane::Yz),
            "xz" => Ok(Plane::Xz),
            _ => Err(Error::Invalid(format!("plane must be xy, yz or xz, got {s:?}"))),
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Xy => "xy",
            Plane::Yz => "yz",
            Plane::Xz => "xz",
        })
    }
}

/// One centered magnitude slice. Pixel `(u, v)` lives at `v * width + u`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterImage {
    pub width: usize,
    pub height: usize,
    pub magnitudes: Vec<f64>,
    pub pixels: Vec<u8>,
}

impl FilterImage {
    /// Binary 8-bit PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Min-max scaling to `0..=255`; a constant field maps to all zeros.
fn to_pixels(m: &[f64]) -> Vec<u8> {
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; m.len()];
    }
    m.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Centered magnitude slice of channel `channel` of a half-spectrum filter
/// `[D, Gx, Gy, Gz/2+1]`, through the DC bin.
pub fn filter_slice<T: Scalar>(
    re: &[T],
    im: &[T],
    grid: Grid3,
    channel: usize,
    plane: Plane,
) -> Result<FilterImage> {
    let Grid3 { x: gx, y: gy, z: gz } = grid;
    let hz = grid.half_z();
    let hv = grid.half_volume();
    if re.len() != im.len() || re.len() % hv != 0 || channel >= re.len() / hv {
        return Err(Error::Invalid(format!(
            "channel {channel} out of range for a filter of {} coefficients on grid {grid:?}",
            re.len()
        )));
    }
    let base = channel * hv;
    let mut full = vec![0.0; grid.volume()];
    for x in 0..gx {
        for y in 0..gy {
            for z in 0..gz {
                // Bins past the stored half mirror through the Hermitian symmetry.
                let (sx, sy, sz) = if z < hz { (x, y, z) } else { ((gx - x) % gx, (gy - y) % gy, gz - z) };
                let i = base + (sx * gy + sy) * hz + sz;
                full[(x * gy + y) * gz + z] = re[i].to_f64().unwrap().hypot(im[i].to_f64().unwrap());
            }
        }
    }
    let shifted = fftshift3(&full, [gx, gy, gz]);
    let at = |x: usize, y: usize, z: usize| shifted[(x * gy + y) * gz + z];
    let (cx, cy, cz) = (gx / 2, gy / 2, gz / 2);
    let (width, height, magnitudes): (usize, usize, Vec<f64>) = match plane {
        Plane::Xy => (gx, gy, (0..gy).flat_map(|v| (0..gx).map(move |u| (u, v))).map(|(u, v)| at(u, v, cz)).collect()),
        Plane::Yz => (gy, gz, (0..gz).flat_map(|v| (0..gy).map(move |u| (u, v))).map(|(u, v)| at(cx, u, v)).collect()),
        Plane::Xz => (gx, gz, (0..gz).flat_map(|v| (0..gx).map(move |u| (u, v))).map(|(u, v)| at(u, cy, v)).collect()),
    };
    let pixels = to_pixels(&magnitudes);
    Ok(FilterImage { width, height, magnitudes, pixels })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Write `filter_L{layer}_C{channel}_{plane}.pgm` per selection plus
/// `filter_spectra.csv`; returns the written paths.
pub fn export_filter_spectra<T: Scalar>(
    model: &SFNet<T>,
    plane: Plane,
    channels: &[usize],
    layers: &[usize],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let cfg = model.config();
    let geo = cfg.geometry()?;
    let grid = Grid3::new(geo.grid[0], geo.grid[1], geo.grid[2])?;
    if let Some(&l) = layers.iter().find(|&&l| l >= cfg.freq_depth) {
        return Err(Error::Invalid(format!("layer {l} out of range: model has {} frequency blocks", cfg.freq_depth)));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= geo.embed_dim) {
        return Err(Error::Invalid(format!("channel {c} out of range: embedding has {} channels", geo.embed_dim)));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut csv = Vec::new();
    writeln!(csv, "layer,channel,plane,u,v,magnitude").expect("in-memory write");
    for &l in layers {
        let get = |part: &str| {
            let name = format!("freq.{l}.filter.{part}");
            model
                .store()
                .by_name(&name)
                .map(|p| p.value.data())
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
        };
        let (re, im) = (get("real")?, get("imag")?);
        for &c in channels {
            let img = filter_slice(re, im, grid, c, plane)?;
            let path = out_dir.join(format!("filter_L{l}_C{c}_{plane}.pgm"));
            write(&path, &img.to_pgm())?;
            written.push(path);
            for v in 0..img.height {
                for u in 0..img.width {
                    let m = img.magnitudes[v * img.width + u];
                    writeln!(csv, "{l},{c},{plane},{u},{v},{m:e}").expect("in-memory write");
                }
            }
        }
    }
    let path = out_dir.join("filter_spectra.csv");
    write(&path, &csv)?;
    written.push(path);
    Ok(written)
}
