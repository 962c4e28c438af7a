//! Header-free volume files and the dataset manifest.
//!
//! Volume files hold little-endian `f32` values with x varying fastest; in
//! memory volumes use the `[nx, ny, nz]` layout with z fastest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeRecord {
    pub subject_id: String,
    pub label: u8,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl VolumeRecord {
    pub fn extent(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

pub fn write_volume(path: &Path, volume: &Tensor<f32>) -> Result<()> {
    let s = volume.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("volume must be [nx, ny, nz], got {s:?}")));
    }
    let (nx, ny, nz) = (s[0], s[1], s[2]);
    let mut bytes = Vec::with_capacity(4 * volume.numel());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                bytes.extend_from_slice(&volume.data()[(x * ny + y) * nz + z].to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: &Path, extent: [usize; 3]) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let [nx, ny, nz] = extent;
    let expected = 4 * nx * ny * nz;
    if bytes.len() != expected {
        return Err(Error::Length { path: path.to_path_buf(), expected, actual: bytes.len() });
    }
    let mut data = vec![0.0f32; nx * ny * nz];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::NonFinite { path: path.to_path_buf(), index: i });
        }
        let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
        data[(x * ny + y) * nz + z] = v;
    }
    Tensor::new(&extent, data)
}

/// Load a record as a single-channel `[1, nx, ny, nz]` tensor.
pub fn load_volume(record: &VolumeRecord, root: &Path) -> Result<Tensor<f32>> {
    let v = read_volume(&root.join(&record.path), record.extent())?;
    v.reshape(&[1, record.nx, record.ny, record.nz])
}

pub fn write_manifest(dir: &Path, records: &[VolumeRecord]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<VolumeRecord>> {
    let path = dir.join(MANIFEST_FILE);
    let mut r = csv::Reader::from_path(&path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<VolumeRecord>, _>>()?;
    if let Some(bad) = records.iter().find(|r| r.label > 1) {
        return Err(Error::Invalid(format!("{}: label {} is not binary", bad.subject_id, bad.label)));
    }
    Ok(records)
}

/// Per-volume z-score. A constant volume maps to zeros and sets the flag.
pub fn normalize_volume(volume: &Tensor<f32>) -> (Tensor<f32>, bool) {
    let n = volume.numel() as f64;
    let mean = volume.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = volume.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        return (Tensor::zeros(volume.shape()), true);
    }
    let inv = 1.0 / var.sqrt();
    (volume.map(|v| ((v as f64 - mean) * inv) as f32), false)
}
