//! The assembled network: stem, dense-attention blocks, patch embedding,
//! global-filter frequency blocks and the classification head.

pub mod accounting;
pub mod config;
pub mod export;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnUpdate, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::norm::update_running;
use crate::param::ParamStore;
use crate::spectral::Grid3;
use crate::tensor::{Scalar, Tensor};

pub use accounting::{count_flops, count_params, count_store_params, FlopCount, ParamCount};
pub use config::{eca_kernel_size, Geometry, SFNetConfig};
pub use export::{export_filter_spectra, filter_slice, FilterImage, Plane};
use layers::Init;

/// A network instance: its configuration and every tensor it owns.
#[derive(Clone, Debug)]
pub struct SFNet<T: Scalar> {
    config: SFNetConfig,
    store: ParamStore<T>,
}

impl<T: Scalar> SFNet<T> {
    /// Fresh parameters drawn from a seeded stream. Values are sampled in
    /// `f64`, so the same seed gives matching `f32` and `f64` models.
    pub fn new(config: SFNetConfig, seed: u64) -> Result<Self> {
        let geo = config.geometry()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let cfg = &config;
        init.conv("stem.conv", cfg.stem_channels, cfg.in_channels, cfg.stem_kernel, true)?;
        for (b, &(cin, _, _)) in geo.blocks.iter().enumerate() {
            for l in 0..cfg.layers_per_block {
                let name = format!("blocks.{b}.layers.{l}");
                init.dense_layer(&name, cin + l * cfg.growth_rate, cfg)?;
            }
            if let Some(&(tin, tout, _)) = geo.transitions.get(b) {
                init.transition(&format!("transitions.{b}"), tin, tout)?;
            }
        }
        let d = geo.embed_dim;
        init.linear("patch.proj", d, d)?;
        let grid = Grid3::new(geo.grid[0], geo.grid[1], geo.grid[2])?;
        for i in 0..cfg.freq_depth {
            init.freq_block(&format!("freq.{i}"), d, grid, cfg)?;
        }
        init.linear("head", d, cfg.num_classes)?;
        Ok(Self { config, store })
    }

    /// Wrap an existing store after checking it holds exactly the tensors
    /// this config registers.
    pub fn from_store(config: SFNetConfig, store: ParamStore<T>) -> Result<Self> {
        let reference = SFNet::<T>::new(config.clone(), 0)?;
        if reference.store.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "config registers {} tensors, store has {}",
                reference.store.len(),
                store.len()
            )));
        }
        for ((_, want), (_, got)) in reference.store.iter().zip(store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    want.name,
                    want.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &SFNetConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }

    pub fn cast<U: Scalar>(&self) -> SFNet<U> {
        SFNet { config: self.config.clone(), store: self.store.cast() }
    }

    pub fn tape(&self) -> Tape<'_, T> {
        Tape::new(&self.store)
    }

    /// Record the full forward pass on `tape`, returning `[N, classes]` logits.
    pub fn forward(&self, tape: &mut Tape<'_, T>, x: Var, train: bool) -> Result<Var> {
        forward(&self.config, tape, x, train)
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = self.tape();
        let x = tape.input(input.clone());
        let y = self.forward(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }

    /// Fold queued batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            update_running(&mut self.store.get_mut(u.mean).value, &u.stats.mean);
            update_running(&mut self.store.get_mut(u.var).value, &u.stats.var);
        }
    }
}

fn stage_error<T: Scalar>(tape: &Tape<'_, T>, stage: &str, e: Error) -> Error {
    match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage: stage.to_string(), message: e.to_string(), trace: tape.shape_trace() },
    }
}

/// The network as a function of the parameters in `tape`'s store.
pub fn forward<T: Scalar>(cfg: &SFNetConfig, tape: &mut Tape<'_, T>, x: Var, train: bool) -> Result<Var> {
    let geo = cfg.geometry()?;
    let s = tape.shape(x);
    let want = [cfg.in_channels, cfg.input_extent[0], cfg.input_extent[1], cfg.input_extent[2]];
    if s.len() != 5 || s[1..] != want {
        let e = Error::Shape(format!("input {s:?} does not match [N, {:?}]", want));
        return Err(stage_error(tape, "input", e));
    }
    let h = layers::conv(tape, "stem.conv", x, cfg.stem_geom()).map_err(|e| stage_error(tape, "stem", e))?;
    let mut h = tape
        .maxpool3d(h, cfg.pool_kernel, cfg.pool_geom())
        .map_err(|e| stage_error(tape, "stem pool", e))?;
    for b in 0..cfg.num_dense_blocks {
        let name = format!("blocks.{b}");
        h = layers::dense_block(tape, &name, h, cfg, train).map_err(|e| stage_error(tape, &name, e))?;
        if b < geo.transitions.len() {
            let name = format!("transitions.{b}");
            let pool = b < cfg.pooled_transitions;
            h = layers::transition(tape, &name, h, pool, train).map_err(|e| stage_error(tape, &name, e))?;
        }
    }
    let mut t = layers::patch_embed(tape, "patch.proj", h, cfg.patch_size)
        .map_err(|e| stage_error(tape, "patch embedding", e))?;
    let grid = Grid3::new(geo.grid[0], geo.grid[1], geo.grid[2])?;
    for i in 0..cfg.freq_depth {
        let name = format!("freq.{i}");
        t = layers::freq_block(tape, &name, t, grid, cfg).map_err(|e| stage_error(tape, &name, e))?;
    }
    let pooled = tape.mean_tokens(t).map_err(|e| stage_error(tape, "head", e))?;
    let w = layers::param(tape, "head.weight")?;
    let b = layers::param(tape, "head.bias")?;
    tape.linear(pooled, w, Some(b)).map_err(|e| stage_error(tape, "head", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_logits_shape() {
        let net = SFNet::<f32>::new(SFNetConfig::tiny(), 1).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32, 32], |i| ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        let y = net.logits(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert!(y.all_finite());
    }

    #[test]
    fn wrong_input_reports_stage_trace() {
        let net = SFNet::<f32>::new(SFNetConfig::tiny(), 1).unwrap();
        let err = net.logits(&Tensor::zeros(&[1, 1, 16, 32, 32])).unwrap_err();
        assert!(matches!(err, Error::Stage { ref stage, .. } if stage == "input"), "{err}");
    }
}
