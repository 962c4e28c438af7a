//! Synthetic dataset generation, volume files, manifests and fold plans.

pub mod folds;
pub mod io;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub use folds::{make_folds, Fold, FoldPlan, NUM_FOLDS};
pub use io::{
    load_volume, normalize_volume, read_manifest, read_volume, write_manifest, write_volume, VolumeRecord,
};
pub use synth::{cavity_voxels, generate_volume, SynthSpec};

/// Subject `i` has label `i % 2`.
pub fn label_of(index: usize) -> u8 {
    (index % 2) as u8
}

/// Write `2 * n_per_class` volumes under `out/volumes/` plus `out/manifest.csv`.
pub fn generate_dataset(spec: &SynthSpec, n_per_class: usize, out: &Path) -> Result<Vec<VolumeRecord>> {
    spec.validate()?;
    if n_per_class == 0 {
        return Err(Error::Invalid("n_per_class must be at least 1".into()));
    }
    let vol_dir = out.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let [nx, ny, nz] = spec.extent;
    let records = (0..2 * n_per_class)
        .into_par_iter()
        .map(|i| {
            let label = label_of(i);
            let rel = PathBuf::from("volumes").join(format!("sub_{i:05}.f32"));
            write_volume(&out.join(&rel), &generate_volume(spec, label, i as u64))?;
            Ok(VolumeRecord { subject_id: format!("sub_{i:05}"), label, path: rel, nx, ny, nz })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(out, &records)?;
    Ok(records)
}
