use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::ConvGeom;
use crate::spectral::Grid3;

/// Every architectural hyperparameter of the network.
///
/// Serialized as a flat JSON object with these field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SFNetConfig {
    pub in_channels: usize,
    /// Input spatial extent `[W, H, D]`.
    pub input_extent: [usize; 3],
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_padding: usize,
    pub num_dense_blocks: usize,
    pub layers_per_block: usize,
    pub growth_rate: usize,
    /// The bottleneck conv emits `bottleneck_factor * growth_rate` channels.
    pub bottleneck_factor: usize,
    pub transition_compression: f64,
    /// How many of the leading transitions halve the spatial extent; the rest
    /// only compress channels.
    pub pooled_transitions: usize,
    pub patch_size: usize,
    pub freq_depth: usize,
    pub mlp_hidden: usize,
    pub mlp_rank1: usize,
    pub mlp_rank2: usize,
    pub num_classes: usize,
    pub spatial_attention_branch_channels: usize,
    pub use_sigmoid_on_spatial_map: bool,
    /// Pre-norm layer norms in each frequency block.
    pub freq_norms: bool,
    pub lambda_init: f64,
    pub filter_init_std: f64,
}

impl Default for SFNetConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

/// Channel widths and extents at every stage, derived from a config.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub stem_extent: [usize; 3],
    pub pool_extent: [usize; 3],
    /// `(input channels, output channels, spatial extent)` per dense block.
    pub blocks: Vec<(usize, usize, [usize; 3])>,
    /// `(input channels, output channels, output extent)` per transition.
    pub transitions: Vec<(usize, usize, [usize; 3])>,
    pub final_channels: usize,
    pub final_extent: [usize; 3],
    pub grid: [usize; 3],
    pub tokens: usize,
    pub embed_dim: usize,
}

impl SFNetConfig {
    /// Desk-scale network for 32³ inputs: three 2-layer blocks, final 4³ grid.
    pub fn tiny() -> Self {
        Self {
            in_channels: 1,
            input_extent: [32, 32, 32],
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            pool_kernel: 3,
            pool_stride: 2,
            pool_padding: 1,
            num_dense_blocks: 3,
            layers_per_block: 2,
            growth_rate: 8,
            bottleneck_factor: 4,
            transition_compression: 0.5,
            pooled_transitions: 1,
            patch_size: 1,
            freq_depth: 2,
            mlp_hidden: 64,
            mlp_rank1: 8,
            mlp_rank2: 8,
            num_classes: 2,
            spatial_attention_branch_channels: 1,
            use_sigmoid_on_spatial_map: true,
            freq_norms: true,
            lambda_init: 0.33,
            filter_init_std: 0.02,
        }
    }

    /// Frequency module only: stem and pool feed the patch embedding directly.
    pub fn freq_only() -> Self {
        Self { num_dense_blocks: 0, pooled_transitions: 0, patch_size: 2, ..Self::tiny() }
    }

    /// Full-width configuration used for cost accounting. Transitions do not
    /// pool, so the 8³ token grid is the same for every block count.
    pub fn paper_scale() -> Self {
        Self {
            input_extent: [64, 64, 64],
            stem_channels: 64,
            num_dense_blocks: 3,
            layers_per_block: 4,
            growth_rate: 16,
            transition_compression: 1.0,
            pooled_transitions: 0,
            patch_size: 2,
            freq_depth: 6,
            mlp_hidden: 512,
            mlp_rank1: 64,
            mlp_rank2: 64,
            ..Self::tiny()
        }
    }

    pub fn stem_geom(&self) -> ConvGeom {
        ConvGeom::new(self.stem_stride, self.stem_padding, 1)
    }

    pub fn pool_geom(&self) -> ConvGeom {
        ConvGeom::new(self.pool_stride, self.pool_padding, 1)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.bottleneck_factor * self.growth_rate
    }

    /// Output channels of a transition fed `c` channels: `ceil(theta * c)`.
    pub fn transition_channels(&self, c: usize) -> usize {
        ((self.transition_compression * c as f64) - 1e-9).ceil().max(1.0) as usize
    }

    /// Check every invariant and derive the stage geometry.
    pub fn geometry(&self) -> Result<Geometry> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.stem_channels == 0 || self.num_classes < 2 {
            return bad("channel counts must be positive and num_classes >= 2".into());
        }
        if self.num_dense_blocks > 0 && (self.layers_per_block == 0 || self.growth_rate == 0) {
            return bad("layers_per_block and growth_rate must be at least 1".into());
        }
        if self.bottleneck_factor == 0 || self.spatial_attention_branch_channels == 0 {
            return bad("bottleneck_factor and spatial_attention_branch_channels must be positive".into());
        }
        if !(self.transition_compression > 0.0 && self.transition_compression <= 1.0) {
            return bad(format!("transition_compression {} outside (0, 1]", self.transition_compression));
        }
        if self.pooled_transitions > self.num_dense_blocks.saturating_sub(1) {
            return bad(format!(
                "pooled_transitions {} exceeds the {} transitions",
                self.pooled_transitions,
                self.num_dense_blocks.saturating_sub(1)
            ));
        }
        if self.mlp_hidden == 0 || self.mlp_rank1 == 0 || self.mlp_rank2 == 0 {
            return bad("mlp_hidden and ranks must be positive".into());
        }
        let extent = |e: [usize; 3], k: usize, g: ConvGeom, what: &str| -> Result<[usize; 3]> {
            let mut out = [0; 3];
            for a in 0..3 {
                out[a] = g.out_extent(e[a], k).ok_or_else(|| {
                    Error::Config(format!("{what}: extent {e:?} admits no kernel placement"))
                })?;
            }
            Ok(out)
        };
        let stem_extent = extent(self.input_extent, self.stem_kernel, self.stem_geom(), "stem")?;
        let pool_extent = extent(stem_extent, self.pool_kernel, self.pool_geom(), "pool")?;
        let mut c = self.stem_channels;
        let mut e = pool_extent;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for b in 0..self.num_dense_blocks {
            let out = c + self.layers_per_block * self.growth_rate;
            blocks.push((c, out, e));
            c = out;
            if b + 1 < self.num_dense_blocks {
                let t = self.transition_channels(c);
                if b < self.pooled_transitions {
                    if e.iter().any(|&n| n < 2) {
                        return bad(format!("transition {b} cannot pool extent {e:?}"));
                    }
                    e = e.map(|n| n / 2);
                }
                transitions.push((c, t, e));
                c = t;
            }
        }
        let p = self.patch_size;
        if p == 0 {
            return bad("patch_size must be positive".into());
        }
        let mut grid = [0; 3];
        for (a, name) in ["W", "H", "D"].iter().enumerate() {
            if e[a] % p != 0 {
                return bad(format!(
                    "final extent {e:?}: axis {name} is not divisible by patch size {p}"
                ));
            }
            grid[a] = e[a] / p;
        }
        Grid3::new(grid[0], grid[1], grid[2])
            .map_err(|err| Error::Config(format!("token grid {grid:?}: {err}")))?;
        Ok(Geometry {
            stem_extent,
            pool_extent,
            blocks,
            transitions,
            final_channels: c,
            final_extent: e,
            grid,
            tokens: grid.iter().product(),
            embed_dim: c * p * p * p,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().map(|_| ())
    }
}

/// ECA kernel size: nearest odd integer to `(log2 C + 1) / 2`, ties toward
/// the smaller, never below 3.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = ((channels.max(1) as f64).log2() + 1.0) / 2.0;
    let half = (t - 1.0) / 2.0;
    let floor = half.floor();
    let j = if half - floor > 0.5 { floor + 1.0 } else { floor };
    let k = 2 * (j.max(0.0) as usize) + 1;
    k.max(3)
}
