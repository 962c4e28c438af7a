//! Closed-form parameter and FLOP accounting.
//!
//! FLOP convention: a multiply-accumulate is 2 operations; a 3D FFT over `V`
//! points costs `5 V log2 V` per channel; normalization, activations, pooling
//! and elementwise products are not counted.

use serde::Serialize;

use crate::error::Result;
use crate::param::ParamStore;
use crate::tensor::Scalar;

use super::config::{eca_kernel_size, SFNetConfig};

/// Trainable element counts per module, in network order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub modules: Vec<(String, u64)>,
    pub total: u64,
}

/// Per-sample forward FLOPs per stage, in network order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub stages: Vec<(String, u64)>,
    pub total: u64,
}

fn conv_params(cout: usize, cin: usize, k: usize, bias: bool) -> u64 {
    (cout * cin * k * k * k + if bias { cout } else { 0 }) as u64
}

fn attention_params(c: usize, cfg: &SFNetConfig) -> u64 {
    let b = cfg.spatial_attention_branch_channels;
    eca_kernel_size(c) as u64
        + 2 * c as u64
        + 3 * conv_params(b, c, 3, true)
        + conv_params(1, 3 * b, 3, true)
        + 3
}

fn dense_layer_params(cin: usize, cfg: &SFNetConfig) -> u64 {
    let mid = cfg.bottleneck_channels();
    2 * cin as u64
        + conv_params(mid, cin, 1, false)
        + attention_params(mid, cfg)
        + 2 * mid as u64
        + conv_params(cfg.growth_rate, mid, 3, false)
}

/// `D r1 + r1 D' + D' + D' r2 + r2 D + D`.
pub fn low_rank_mlp_params(d: usize, hidden: usize, r1: usize, r2: usize) -> u64 {
    (d * r1 + r1 * hidden + hidden + hidden * r2 + r2 * d + d) as u64
}

/// Hand-derived counts from the config alone.
pub fn count_params(cfg: &SFNetConfig) -> Result<ParamCount> {
    let geo = cfg.geometry()?;
    let mut modules = vec![("stem".to_string(), conv_params(cfg.stem_channels, cfg.in_channels, cfg.stem_kernel, true))];
    for (b, &(cin, _, _)) in geo.blocks.iter().enumerate() {
        let n = (0..cfg.layers_per_block).map(|l| dense_layer_params(cin + l * cfg.growth_rate, cfg)).sum();
        modules.push((format!("blocks.{b}"), n));
        if let Some(&(tin, tout, _)) = geo.transitions.get(b) {
            modules.push((format!("transitions.{b}"), 2 * tin as u64 + conv_params(tout, tin, 1, false)));
        }
    }
    let d = geo.embed_dim;
    modules.push(("patch".into(), (d * d + d) as u64));
    let [gx, gy, gz] = geo.grid;
    let filter = 2 * (d * gx * gy * (gz / 2 + 1)) as u64;
    let norms = if cfg.freq_norms { 4 * d as u64 } else { 0 };
    let mlp = low_rank_mlp_params(d, cfg.mlp_hidden, cfg.mlp_rank1, cfg.mlp_rank2);
    for i in 0..cfg.freq_depth {
        modules.push((format!("freq.{i}"), norms + filter + mlp));
    }
    modules.push(("head".into(), (d * cfg.num_classes + cfg.num_classes) as u64));
    let total = modules.iter().map(|(_, n)| n).sum();
    Ok(ParamCount { modules, total })
}

fn module_key(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    match first {
        "blocks" | "transitions" | "freq" => format!("{first}.{}", parts.next().unwrap_or_default()),
        _ => first.to_string(),
    }
}

/// Count by walking the trainable tensors actually registered in a store.
pub fn count_store_params<T: Scalar>(store: &ParamStore<T>) -> ParamCount {
    let mut modules: Vec<(String, u64)> = Vec::new();
    for (_, p) in store.iter().filter(|(_, p)| p.trainable) {
        let key = module_key(&p.name);
        match modules.last_mut() {
            Some((k, n)) if *k == key => *n += p.value.numel() as u64,
            _ => modules.push((key, p.value.numel() as u64)),
        }
    }
    let total = modules.iter().map(|(_, n)| n).sum();
    ParamCount { modules, total }
}

fn vox(e: [usize; 3]) -> u64 {
    e.iter().map(|&n| n as u64).product()
}

fn conv_flops(cin: usize, cout: usize, k: usize, out_vox: u64) -> u64 {
    2 * (cin * cout * k * k * k) as u64 * out_vox
}

/// `5 V log2 V` for one channel transform.
pub fn fft_flops(volume: usize) -> u64 {
    let v = volume as f64;
    (5.0 * v * v.log2()).round() as u64
}

pub fn count_flops(cfg: &SFNetConfig) -> Result<FlopCount> {
    let geo = cfg.geometry()?;
    let mut stages = vec![(
        "stem".to_string(),
        conv_flops(cfg.in_channels, cfg.stem_channels, cfg.stem_kernel, vox(geo.stem_extent)),
    )];
    let mid = cfg.bottleneck_channels();
    let b = cfg.spatial_attention_branch_channels;
    for (i, &(cin, _, e)) in geo.blocks.iter().enumerate() {
        let v = vox(e);
        let mut f = 0;
        for l in 0..cfg.layers_per_block {
            let c = cin + l * cfg.growth_rate;
            f += conv_flops(c, mid, 1, v);
            f += 2 * (eca_kernel_size(mid) * mid) as u64;
            f += 3 * conv_flops(mid, b, 3, v) + conv_flops(3 * b, 1, 3, v);
            f += conv_flops(mid, cfg.growth_rate, 3, v);
        }
        stages.push((format!("blocks.{i}"), f));
        if let Some(&(tin, tout, _)) = geo.transitions.get(i) {
            stages.push((format!("transitions.{i}"), conv_flops(tin, tout, 1, v)));
        }
    }
    let (d, l) = (geo.embed_dim as u64, geo.tokens as u64);
    stages.push(("patch".into(), 2 * d * d * l));
    let fft = 2 * d * fft_flops(geo.tokens);
    let (h, r1, r2) = (cfg.mlp_hidden as u64, cfg.mlp_rank1 as u64, cfg.mlp_rank2 as u64);
    let mlp = 2 * l * (d * r1 + r1 * h + h * r2 + r2 * d);
    for i in 0..cfg.freq_depth {
        stages.push((format!("freq.{i}"), fft + mlp));
    }
    stages.push(("head".into(), 2 * d * cfg.num_classes as u64));
    let total = stages.iter().map(|(_, n)| n).sum();
    Ok(FlopCount { stages, total })
}
