mod common;

use rand::Rng;
use sfnet::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use sfnet::model::layers::{self, Init};
use sfnet::model::{
    count_flops, count_params, count_store_params, eca_kernel_size, export_filter_spectra, filter_slice, Plane,
    SFNet, SFNetConfig,
};
use sfnet::ops::{patchify, unpatchify};
use sfnet::spectral::Grid3;
use sfnet::{ParamStore, Tape, Tensor};

use common::*;

fn attention_cfg(branch: usize, sigmoid: bool) -> SFNetConfig {
    SFNetConfig { spatial_attention_branch_channels: branch, use_sigmoid_on_spatial_map: sigmoid, ..SFNetConfig::tiny() }
}

#[test]
fn eca_kernel_examples() {
    assert_eq!(eca_kernel_size(64), 3);
    assert_eq!(eca_kernel_size(256), 5);
    assert_eq!(eca_kernel_size(2), 3);
}

#[test]
fn attention_matches_straight_line_oracle() {
    for seed in 0..5 {
        let branch = 1 + seed as usize % 2;
        let sig = seed != 3;
        let cfg = attention_cfg(branch, sig);
        let mut r = rng(seed);
        let mut store = ParamStore::<f64>::new();
        Init { store: &mut store, rng: &mut r }.attention("a", 6, &cfg).unwrap();
        perturb(&mut store, &mut r);
        let f = random_tensor(&[2, 6, 4, 3, 5], &mut r);
        let mut tape = Tape::new(&store);
        let x = tape.input(f.clone());
        let y = layers::attention(&mut tape, "a", x, &cfg, true).unwrap();
        let want = attention(&store, "a", &f, sig);
        let err = max_abs_diff(tape.value(y).data(), want.data());
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn dense_layer_matches_scripted_oracle() {
    for seed in 0..3 {
        let cfg = SFNetConfig { growth_rate: 3, bottleneck_factor: 2, ..SFNetConfig::tiny() };
        let mut r = rng(100 + seed);
        let mut store = ParamStore::<f64>::new();
        Init { store: &mut store, rng: &mut r }.dense_layer("d", 5, &cfg).unwrap();
        perturb(&mut store, &mut r);
        let x = random_tensor(&[2, 5, 3, 4, 3], &mut r);
        let mut tape = Tape::new(&store);
        let v = tape.input(x.clone());
        let y = layers::dense_layer(&mut tape, "d", v, &cfg, true).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 3, 4, 3]);
        let want = dense_layer(&store, "d", &x, true);
        let err = max_abs_diff(tape.value(y).data(), want.data());
        assert!(err < 1e-6, "seed {seed}: {err:e}");
    }
}

#[test]
fn attention_degenerate_weights() {
    let mut r = rng(7);
    let f = random_tensor(&[2, 4, 3, 3, 3], &mut r);
    let store = ParamStore::<f64>::new();
    let mut tape = Tape::new(&store);
    let fv = tape.input(f.clone());
    let ac = tape.input(random_tensor(&[2, 4, 1, 1, 1], &mut r));
    let as_ = tape.input(random_tensor(&[2, 1, 3, 3, 3], &mut r));
    let l = [0.0, 0.0, 1.0].map(|v| tape.input(Tensor::new(&[1], vec![v]).unwrap()));
    let y = layers::fuse_attention(&mut tape, fv, ac, as_, l).unwrap();
    assert_eq!(tape.value(y).data(), f.data());

    let ones_c = tape.input(Tensor::ones(&[2, 4, 1, 1, 1]));
    let ones_s = tape.input(Tensor::ones(&[2, 1, 3, 3, 3]));
    let l = [1.0; 3].map(|v| tape.input(Tensor::new(&[1], vec![v]).unwrap()));
    let y = layers::fuse_attention(&mut tape, fv, ones_c, ones_s, l).unwrap();
    let five: Vec<f64> = f.data().iter().map(|v| 5.0 * v).collect();
    assert!(max_abs_diff(tape.value(y).data(), &five) < 1e-12);

    let l = [0.2, -0.7, 1.3];
    let lv = l.map(|v| tape.input(Tensor::new(&[1], vec![v]).unwrap()));
    let y = layers::fuse_attention(&mut tape, fv, ones_c, ones_s, lv).unwrap();
    let s = 2.0 * l[0] + 2.0 * l[1] + l[2];
    let want: Vec<f64> = f.data().iter().map(|v| s * v).collect();
    assert!(max_abs_diff(tape.value(y).data(), &want) < 1e-12);
}

fn freq_setup(seed: u64, norms: bool, grid: Grid3, d: usize) -> (SFNetConfig, ParamStore<f64>, Tensor<f64>) {
    let cfg = SFNetConfig { freq_norms: norms, mlp_hidden: 7, mlp_rank1: 3, mlp_rank2: 2, ..SFNetConfig::tiny() };
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    Init { store: &mut store, rng: &mut r }.freq_block("f", d, grid, &cfg).unwrap();
    perturb(&mut store, &mut r);
    let x = random_tensor(&[2, grid.volume(), d], &mut r);
    (cfg, store, x)
}

#[test]
fn freq_block_matches_straight_line_oracle() {
    let grids = [[2, 4, 8], [4, 4, 4], [8, 2, 2], [2, 2, 2], [4, 2, 8]];
    for seed in 0..5u64 {
        let g = grids[seed as usize];
        let grid = Grid3::new(g[0], g[1], g[2]).unwrap();
        let norms = seed % 2 == 0;
        let (cfg, store, x) = freq_setup(seed, norms, grid, 5);
        let mut tape = Tape::new(&store);
        let v = tape.input(x.clone());
        let y = layers::freq_block(&mut tape, "f", v, grid, &cfg).unwrap();
        let want = freq_block(&store, "f", &x, g, norms);
        let err = max_abs_diff(tape.value(y).data(), &want);
        assert!(err < 1e-6, "seed {seed} grid {g:?}: {err:e}");
    }
}

#[test]
fn freq_block_filter_examples() {
    let grid = Grid3::new(2, 4, 4).unwrap();
    let (cfg, mut store, x) = freq_setup(3, false, grid, 3);
    for name in ["f.mlp.w4", "f.mlp.b4"] {
        store.by_name_mut(name).unwrap().value.data_mut().fill(0.0);
    }
    let run = |store: &ParamStore<f64>| {
        let mut tape = Tape::new(store);
        let v = tape.input(x.clone());
        let y = layers::freq_block(&mut tape, "f", v, grid, &cfg).unwrap();
        tape.value(y).clone()
    };
    store.by_name_mut("f.filter.real").unwrap().value.data_mut().fill(1.0);
    store.by_name_mut("f.filter.imag").unwrap().value.data_mut().fill(0.0);
    let doubled: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
    assert!(max_abs_diff(run(&store).data(), &doubled) < 1e-12);
    store.by_name_mut("f.filter.real").unwrap().value.data_mut().fill(0.0);
    assert!(max_abs_diff(run(&store).data(), x.data()) < 1e-15);
}

#[test]
fn patch_examples_and_round_trip() {
    let mut r = rng(11);
    let x = random_tensor(&[1, 2, 8, 8, 8], &mut r);
    let t = patchify(&x, 4).unwrap();
    assert_eq!(t.shape(), &[1, 8, 128]);
    let back = unpatchify(&t, x.shape(), 4).unwrap();
    assert_eq!(back.data(), x.data());
    let x = random_tensor(&[2, 3, 4, 6, 2], &mut r);
    let t = patchify(&x, 2).unwrap();
    assert_eq!(t.shape(), &[2, 6, 24]);
    assert_eq!(unpatchify(&t, x.shape(), 2).unwrap().data(), x.data());
}

fn sweep_cfg(blocks: usize, layers: usize, growth: usize) -> SFNetConfig {
    SFNetConfig {
        input_extent: [16, 16, 16],
        stem_channels: 8,
        num_dense_blocks: blocks,
        layers_per_block: layers,
        growth_rate: growth,
        bottleneck_factor: 2,
        pooled_transitions: blocks.saturating_sub(1).min(1),
        freq_depth: 1,
        mlp_hidden: 8,
        mlp_rank1: 2,
        mlp_rank2: 2,
        ..SFNetConfig::tiny()
    }
}

#[test]
fn structural_sweep_channel_widths() {
    for blocks in 1..=4 {
        for layers in 1..=4 {
            for growth in [4, 8, 12] {
                let cfg = sweep_cfg(blocks, layers, growth);
                let mut c = cfg.stem_channels;
                let mut widths = Vec::new();
                for b in 0..blocks {
                    widths.push(c);
                    c += layers * growth;
                    if b + 1 < blocks {
                        c = (c as f64 * 0.5).ceil() as usize;
                    }
                }
                let side = if blocks > 1 { 2 } else { 4 };
                let geo = cfg.geometry().unwrap();
                assert_eq!(geo.final_channels, c, "B={blocks} L={layers} g={growth}");
                assert_eq!(geo.tokens, side * side * side);
                let net = SFNet::<f32>::new(cfg.clone(), 0).unwrap();
                for (b, &w) in widths.iter().enumerate() {
                    for l in 0..layers {
                        let p = net.store().by_name(&format!("blocks.{b}.layers.{l}.bn1.gamma")).unwrap();
                        assert_eq!(p.value.numel(), w + l * growth);
                    }
                }
                assert_eq!(net.store().by_name("patch.proj.weight").unwrap().value.shape(), &[c, c]);
                let x = Tensor::from_fn(&[1, 1, 16, 16, 16], |i| ((i * 31) % 17) as f32 / 17.0);
                let y = net.logits(&x).unwrap();
                assert_eq!(y.shape(), &[1, 2]);
                assert!(y.all_finite());
            }
        }
    }
}

#[test]
fn invalid_configs_fail_before_running() {
    let bad = SFNetConfig { transition_compression: 0.0, ..SFNetConfig::tiny() };
    assert!(SFNet::<f32>::new(bad, 0).is_err());
    let bad = SFNetConfig { patch_size: 3, ..SFNetConfig::tiny() };
    assert!(bad.validate().unwrap_err().to_string().contains("divisible"));
    let bad = SFNetConfig { pooled_transitions: 3, ..SFNetConfig::tiny() };
    assert!(bad.validate().is_err());
}

#[test]
fn low_rank_mlp_and_stem_counts() {
    let cfg = SFNetConfig { mlp_hidden: 128, mlp_rank1: 8, mlp_rank2: 8, ..SFNetConfig::tiny() };
    let mut store = ParamStore::<f64>::new();
    Init { store: &mut store, rng: &mut rng(0) }.low_rank_mlp("m", 64, &cfg).unwrap();
    let n: usize = store.iter().map(|(_, p)| p.value.numel()).sum();
    assert_eq!(n, 3264);
    let stem = count_params(&SFNetConfig::tiny()).unwrap().modules[0].1;
    assert_eq!(stem, 16 * 343 + 16);
    let flops = count_flops(&SFNetConfig::tiny()).unwrap().stages[0].1;
    assert_eq!(flops, 2 * 16 * 343 * 16 * 16 * 16);
}

#[test]
fn counts_match_registered_tensors() {
    for cfg in [SFNetConfig::tiny(), SFNetConfig::freq_only(), sweep_cfg(4, 3, 12), sweep_cfg(1, 1, 4)] {
        let net = SFNet::<f32>::new(cfg.clone(), 1).unwrap();
        assert_eq!(count_params(&cfg).unwrap(), count_store_params(net.store()));
    }
    let dir = tempfile::tempdir().unwrap();
    let net = SFNet::<f32>::new(SFNetConfig::tiny(), 1).unwrap();
    save_checkpoint(&net, dir.path()).unwrap();
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!(m.trainable_elements(), count_params(&SFNetConfig::tiny()).unwrap().total);
}

#[test]
fn counts_grow_with_every_axis() {
    let base = SFNetConfig::paper_scale();
    let p = |c: &SFNetConfig| count_params(c).unwrap().total;
    let f = |c: &SFNetConfig| count_flops(c).unwrap().total;
    for depth in 1..8 {
        let a = SFNetConfig { freq_depth: depth, ..base.clone() };
        let b = SFNetConfig { freq_depth: depth + 1, ..base.clone() };
        assert!(p(&b) > p(&a) && f(&b) > f(&a));
        // each extra frequency block adds the same amount
        let c = SFNetConfig { freq_depth: depth + 2, ..base.clone() };
        assert_eq!(p(&c) - p(&b), p(&b) - p(&a));
        assert_eq!(f(&c) - f(&b), f(&b) - f(&a));
    }
    for blocks in 1..4 {
        let a = SFNetConfig { num_dense_blocks: blocks, ..base.clone() };
        let b = SFNetConfig { num_dense_blocks: blocks + 1, ..base.clone() };
        assert!(p(&b) > p(&a) && f(&b) > f(&a), "blocks {blocks}");
    }
    for layers in 1..6 {
        let a = SFNetConfig { layers_per_block: layers, ..base.clone() };
        let b = SFNetConfig { layers_per_block: layers + 1, ..base.clone() };
        assert!(p(&b) > p(&a) && f(&b) > f(&a), "layers {layers}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let net = SFNet::<f32>::new(SFNetConfig::tiny(), 5).unwrap();
    save_checkpoint(&net, dir.path()).unwrap();
    let back = load_checkpoint::<f32>(dir.path()).unwrap();
    assert_eq!(back.config(), net.config());
    let x = Tensor::from_fn(&[1, 1, 32, 32, 32], |i| ((i * 13) % 29) as f32 / 29.0 - 0.5);
    let a = net.logits(&x).unwrap();
    let b = back.logits(&x).unwrap();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let again = tempfile::tempdir().unwrap();
    save_checkpoint(&back, again.path()).unwrap();
    for f in ["params.bin", "manifest.json", "config.json"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(again.path().join(f)).unwrap());
    }
}

#[test]
fn eval_logits_are_per_sample() {
    let net = SFNet::<f64>::new(SFNetConfig::tiny(), 2).unwrap();
    let mut r = rng(3);
    let a = random_tensor(&[1, 1, 32, 32, 32], &mut r);
    let b = random_tensor(&[1, 1, 32, 32, 32], &mut r);
    let both = Tensor::new(&[2, 1, 32, 32, 32], [a.data(), b.data()].concat()).unwrap();
    let same = Tensor::new(&[2, 1, 32, 32, 32], [a.data(), a.data()].concat()).unwrap();
    let la = net.logits(&a).unwrap();
    let lb = net.logits(&b).unwrap();
    let lab = net.logits(&both).unwrap();
    assert!(max_abs_diff(&lab.data()[..2], la.data()) < 1e-10);
    assert!(max_abs_diff(&lab.data()[2..], lb.data()) < 1e-10);
    let ls = net.logits(&same).unwrap();
    assert!(max_abs_diff(&ls.data()[..2], &ls.data()[2..]) < 1e-12);
}

#[test]
fn gradients_reach_every_trainable_tensor() {
    let mut healthy = 0;
    for seed in 0..5 {
        let net = SFNet::<f32>::new(SFNetConfig::tiny(), seed).unwrap();
        let mut r = rng(seed);
        let x = Tensor::from_fn(&[2, 1, 32, 32, 32], |_| r.gen_range(-1.0f32..1.0));
        let mut tape = net.tape();
        let xv = tape.input(x);
        let logits = net.forward(&mut tape, xv, true).unwrap();
        let loss = tape.cross_entropy(logits, &[0, 1]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let ok = net.store().iter().filter(|(_, p)| p.trainable).all(|(id, _)| {
            grads.param(id).is_some_and(|g| g.all_finite() && g.data().iter().any(|&v| v != 0.0))
        });
        healthy += ok as usize;
    }
    assert!(healthy >= 4, "{healthy}/5 seeds had gradients on every tensor");
}

fn filter_model() -> SFNet<f64> {
    let cfg = SFNetConfig { freq_depth: 1, ..SFNetConfig::tiny() };
    SFNet::<f64>::new(cfg, 0).unwrap()
}

#[test]
fn dc_only_filter_peaks_at_center() {
    let grid = Grid3::cube(4).unwrap();
    let hv = grid.half_volume();
    let mut re = vec![0.0; 2 * hv];
    let im = vec![0.0; 2 * hv];
    re[hv] = 1.0;
    let img = filter_slice(&re, &im, grid, 1, Plane::Xy).unwrap();
    let max = img.magnitudes.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(img.magnitudes[2 * img.width + 2], max);
    assert_eq!(img.pixels[2 * img.width + 2], 255);
    assert_eq!(img.pixels.iter().filter(|&&p| p > 0).count(), 1);
    let flat = filter_slice(&vec![1.0; hv], &vec![0.0; hv], grid, 0, Plane::Yz).unwrap();
    assert!(flat.pixels.iter().all(|&p| p == 0));
}

#[test]
fn exported_csv_matches_filter_magnitudes() {
    let net = filter_model();
    let dir = tempfile::tempdir().unwrap();
    let written = export_filter_spectra(&net, Plane::Xy, &[0, 5], &[0], dir.path()).unwrap();
    assert_eq!(written.len(), 3);
    let re = net.store().by_name("freq.0.filter.real").unwrap().value.data();
    let im = net.store().by_name("freq.0.filter.imag").unwrap().value.data();
    let g = 4;
    let hz = g / 2 + 1;
    let text = std::fs::read_to_string(dir.path().join("filter_spectra.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (c, u, v): (usize, usize, usize) = (f[1].parse().unwrap(), f[3].parse().unwrap(), f[4].parse().unwrap());
        let m: f64 = f[5].parse().unwrap();
        let (kx, ky) = ((u + g - g / 2) % g, (v + g - g / 2) % g);
        let i = c * g * g * hz + (kx * g + ky) * hz;
        assert!((m - re[i].hypot(im[i])).abs() < 1e-6, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 2 * g * g);
    let pgm = std::fs::read(dir.path().join("filter_L0_C5_xy.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
    assert_eq!(pgm.len(), 11 + 16);
}
