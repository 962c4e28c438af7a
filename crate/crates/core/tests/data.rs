use std::collections::BTreeSet;

use sfnet::data::{
    generate_dataset, generate_volume, label_of, load_volume, make_folds, normalize_volume, read_manifest,
    read_volume, write_volume, SynthSpec,
};
use sfnet::{Error, Tensor};

/// Voxels under 0.5 intensity within `radius` of the grid center.
fn dark_voxels(v: &Tensor<f32>, radius: f64) -> usize {
    let s = v.shape();
    let mut n = 0;
    for x in 0..s[0] {
        for y in 0..s[1] {
            for z in 0..s[2] {
                let d = |i: usize, e: usize| i as f64 - (e as f64 - 1.0) / 2.0;
                let r2 = d(x, s[0]).powi(2) + d(y, s[1]).powi(2) + d(z, s[2]).powi(2);
                if r2 <= radius * radius && v.data()[(x * s[1] + y) * s[2] + z] < 0.5 {
                    n += 1;
                }
            }
        }
    }
    n
}

#[test]
fn generation_is_deterministic_on_disk() {
    let spec = SynthSpec { seed: 3, ..SynthSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = generate_dataset(&spec, 3, a.path()).unwrap();
    let rb = generate_dataset(&spec, 3, b.path()).unwrap();
    assert_eq!(ra, rb);
    for r in &ra {
        assert_eq!(std::fs::read(a.path().join(&r.path)).unwrap(), std::fs::read(b.path().join(&r.path)).unwrap());
    }
    let other = generate_volume(&SynthSpec { seed: 4, ..spec.clone() }, 0, 0);
    assert_ne!(other.data(), generate_volume(&spec, 0, 0).data());
}

#[test]
fn manifest_counts_rows_per_label() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&SynthSpec::default(), 5, dir.path()).unwrap();
    let rows = read_manifest(dir.path()).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.label == 1).count(), 5);
    let header = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(header.starts_with("subject_id,label,path,nx,ny,nz\n"));
    let v = load_volume(&rows[0], dir.path()).unwrap();
    assert_eq!(v.shape(), &[1, 32, 32, 32]);
}

#[test]
fn noiseless_class_b_has_larger_cavity() {
    let spec = SynthSpec { noise: 0.0, jitter: 0.0, ..SynthSpec::default() };
    for pair in 0..10u64 {
        let a = dark_voxels(&generate_volume(&spec, 0, 2 * pair), 8.0);
        let b = dark_voxels(&generate_volume(&spec, 1, 2 * pair + 1), 8.0);
        assert!(b > a, "pair {pair}: {b} <= {a}");
    }
}

#[test]
fn cavity_threshold_separates_default_classes() {
    let spec = SynthSpec::default();
    let samples: Vec<(usize, u8)> = (0..200)
        .map(|i| (dark_voxels(&generate_volume(&spec, label_of(i), i as u64), 8.0), label_of(i)))
        .collect();
    let best = samples
        .iter()
        .map(|&(t, _)| samples.iter().filter(|&&(c, l)| (c >= t) == (l == 1)).count())
        .max()
        .unwrap();
    let acc = best as f64 / samples.len() as f64;
    assert!(acc >= 0.95, "threshold accuracy {acc}");
}

#[test]
fn volume_files_round_trip_and_reject_bad_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.f32");
    let v = Tensor::from_fn(&[3, 4, 5], |i| i as f32 * 0.25 - 1.0);
    write_volume(&path, &v).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    // x varies fastest on disk
    assert_eq!(f32::from_le_bytes(bytes[4..8].try_into().unwrap()), v.data()[4 * 5]);
    assert_eq!(read_volume(&path, [3, 4, 5]).unwrap().data(), v.data());

    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    match read_volume(&path, [3, 4, 5]).unwrap_err() {
        Error::Length { expected, actual, .. } => assert_eq!((expected, actual), (240, 236)),
        e => panic!("unexpected {e}"),
    }
    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(read_volume(&path, [3, 4, 5]), Err(Error::NonFinite { index: 2, .. })));

    let c = Tensor::full(&[2, 2, 2], 3.5f32);
    write_volume(&path, &c).unwrap();
    assert!(read_volume(&path, [2, 2, 2]).unwrap().data().iter().all(|&x| x == 3.5));
}

#[test]
fn z_score_normalization() {
    let v = generate_volume(&SynthSpec::default(), 1, 9);
    let (z, flag) = normalize_volume(&v);
    assert!(!flag);
    let n = z.numel() as f64;
    let mean = z.data().iter().map(|&x| x as f64).sum::<f64>() / n;
    let sd = (z.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-5 && (sd - 1.0).abs() < 1e-5, "{mean} {sd}");
    let (z2, _) = normalize_volume(&v.map(|x| 3.0 * x - 7.0));
    let diff = z.data().iter().zip(z2.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    assert!(diff < 1e-4, "{diff}");
    let (zero, flag) = normalize_volume(&Tensor::full(&[2, 2, 2], 4.0f32));
    assert!(flag && zero.data().iter().all(|&x| x == 0.0));
}

fn check_plan(labels: &[u8], seed: u64) {
    let plan = make_folds(labels, seed).unwrap();
    let n = labels.len();
    let frac = |idx: &[usize]| idx.iter().filter(|&&i| labels[i] == 1).count();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let test: BTreeSet<usize> = plan.test.iter().copied().collect();
    assert_eq!(test.len(), (0.15 * n as f64).round() as usize);
    let mut union = BTreeSet::new();
    for f in &plan.folds {
        let train: BTreeSet<usize> = f.train.iter().copied().collect();
        let val: BTreeSet<usize> = f.val.iter().copied().collect();
        assert!(train.is_disjoint(&val) && test.is_disjoint(&train) && test.is_disjoint(&val));
        assert_eq!(train.len() + val.len() + test.len(), n);
        for v in &val {
            assert!(union.insert(*v), "record {v} validated twice");
        }
        for split in [&f.train, &f.val] {
            let expected = split.len() as f64 * pos as f64 / n as f64;
            assert!((frac(split) as f64 - expected).abs() <= 1.0 + 1e-9, "seed {seed}");
        }
    }
    assert_eq!(union.len() + test.len(), n);
    let expected = test.len() as f64 * pos as f64 / n as f64;
    assert!((frac(&plan.test) as f64 - expected).abs() <= 1.0 + 1e-9);
}

#[test]
fn fold_plan_invariants_hold_for_many_seeds() {
    let balanced: Vec<u8> = (0..100).map(|i| label_of(i)).collect();
    let skewed: Vec<u8> = (0..57).map(|i| (i % 3 == 0) as u8).collect();
    for seed in 0..10 {
        check_plan(&balanced, seed);
        check_plan(&skewed, seed);
    }
    let plan = make_folds(&balanced, 0).unwrap();
    assert_eq!(plan.test.len(), 15);
    for f in &plan.folds {
        assert!(f.val.len().abs_diff(17) <= 1 && f.train.len().abs_diff(68) <= 1);
    }
    assert_eq!(plan, make_folds(&balanced, 0).unwrap());
    assert_ne!(plan.test, make_folds(&balanced, 1).unwrap().test);
    let json = serde_json::to_string(&plan).unwrap();
    assert!(json.contains("\"test\"") && json.contains("\"folds\"") && json.contains("\"seed\""));
}

#[test]
fn fold_plan_rejects_degenerate_manifests() {
    assert!(make_folds(&[1; 20], 0).is_err());
    assert!(make_folds(&[0, 1, 0, 1], 0).is_err());
}
