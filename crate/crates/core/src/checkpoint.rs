//! Checkpoint directories: `manifest.json` (name → shape, dtype, byte offset),
//! `params.bin` (little-endian values, concatenated in manifest order) and,
//! for full models, `config.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SFNet, SFNetConfig};
use crate::param::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub trainable: bool,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<ManifestEntry>,
}

impl Manifest {
    /// Sum of element counts over trainable tensors.
    pub fn trainable_elements(&self) -> u64 {
        self.tensors
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.shape.iter().product::<usize>() as u64)
            .sum()
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_params<T: Scalar>(store: &ParamStore<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        tensors.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset: bytes.len(),
            trainable: p.trainable,
            decay: p.decay,
        });
        for &v in p.value.data() {
            v.write_le(&mut bytes);
        }
    }
    let manifest = serde_json::to_string_pretty(&Manifest { tensors })?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PARAMS_FILE);
    fs::write(&ppath, bytes).map_err(|e| Error::io(&ppath, e))
}

fn decode<T: Scalar>(dtype: &str, raw: &[u8]) -> Result<Vec<T>> {
    match dtype {
        d if d == T::DTYPE => Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect()),
        "f32" => Ok(raw.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect()),
        "f64" => Ok(raw.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect()),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    }
}

/// Read every tensor, converting between `f32` and `f64` if needed.
pub fn load_params<T: Scalar>(dir: &Path) -> Result<ParamStore<T>> {
    let manifest = read_manifest(dir)?;
    let ppath = dir.join(PARAMS_FILE);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("{}: unsupported dtype {other}", e.name))),
        };
        let numel: usize = e.shape.iter().product();
        let end = e.offset + numel * width;
        if end > bytes.len() {
            return Err(Error::Length { path: ppath.clone(), expected: end, actual: bytes.len() });
        }
        let data = decode(&e.dtype, &bytes[e.offset..end])?;
        store.add(&e.name, Tensor::new(&e.shape, data)?, e.trainable, e.decay)?;
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(model: &SFNet<T>, dir: &Path) -> Result<()> {
    save_params(model.store(), dir)?;
    let path = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(model.config())?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_config(path: &Path) -> Result<SFNetConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: SFNetConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<SFNet<T>> {
    let cfg = load_config(&dir.join(CONFIG_FILE))?;
    SFNet::from_store(cfg, load_params(dir)?)
}
