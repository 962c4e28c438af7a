use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use sfnet_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sfnet_last_error()) }.to_string_lossy().into_owned()
}

fn tiny(seed: u64) -> *mut SfnetModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sfnet_model_new_tiny(seed, &mut m) }, SfnetStatus::Ok);
    assert!(!m.is_null());
    m
}

fn input(batch: usize) -> Vec<f32> {
    (0..batch * 32 * 32 * 32).map(|i| ((i * 7919) % 101) as f32 / 101.0 - 0.5).collect()
}

#[test]
fn forward_save_load_round_trip() {
    let m = tiny(3);
    let mut extent = [0usize; 3];
    assert_eq!(unsafe { sfnet_model_input_extent(m, extent.as_mut_ptr()) }, SfnetStatus::Ok);
    assert_eq!(extent, [32, 32, 32]);
    let x = input(2);
    let mut a = [0f32; 4];
    assert_eq!(unsafe { sfnet_model_forward(m, x.as_ptr(), 2, a.as_mut_ptr(), 4) }, SfnetStatus::Ok);
    assert!(a.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sfnet_model_save(m, path.as_ptr()) }, SfnetStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { sfnet_model_load(path.as_ptr(), &mut loaded) }, SfnetStatus::Ok);
    let mut b = [0f32; 4];
    assert_eq!(unsafe { sfnet_model_forward(loaded, x.as_ptr(), 2, b.as_mut_ptr(), 4) }, SfnetStatus::Ok);
    assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));

    let (mut pa, mut pb) = (0u64, 0u64);
    unsafe {
        assert_eq!(sfnet_model_param_count(m, &mut pa), SfnetStatus::Ok);
        assert_eq!(sfnet_model_param_count(loaded, &mut pb), SfnetStatus::Ok);
        sfnet_model_free(m);
        sfnet_model_free(loaded);
    }
    assert_eq!(pa, pb);
    assert_eq!(pa, sfnet::model::count_params(&sfnet::model::SFNetConfig::tiny()).unwrap().total);
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let m = tiny(0);
    let x = input(1);
    let mut out = [0f32; 3];
    assert_eq!(unsafe { sfnet_model_forward(m, x.as_ptr(), 1, out.as_mut_ptr(), 3) }, SfnetStatus::InvalidArgument);
    assert!(last_error().contains("logits_len"));
    assert_eq!(unsafe { sfnet_model_forward(m, ptr::null(), 1, out.as_mut_ptr(), 2) }, SfnetStatus::NullPointer);
    assert_eq!(last_error(), "input is null");

    let missing = CString::new("/nonexistent/sfnet/ckpt").unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { sfnet_model_load(missing.as_ptr(), &mut h) };
    assert_ne!(s, SfnetStatus::Ok);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    let bad = CString::new(r#"{"growth_rate": 8}"#).unwrap();
    assert_eq!(unsafe { sfnet_model_from_json(bad.as_ptr(), 0, &mut h) }, SfnetStatus::Config);
    assert!(last_error().contains("missing field"));
    unsafe { sfnet_model_free(m) };
    unsafe { sfnet_model_free(ptr::null_mut()) };
}

#[test]
fn json_config_builds_the_same_model() {
    let json = CString::new(serde_json::to_string(&sfnet::model::SFNetConfig::tiny()).unwrap()).unwrap();
    let mut a = ptr::null_mut();
    assert_eq!(unsafe { sfnet_model_from_json(json.as_ptr(), 9, &mut a) }, SfnetStatus::Ok);
    let b = tiny(9);
    let x = input(1);
    let (mut la, mut lb) = ([0f32; 2], [0f32; 2]);
    unsafe {
        sfnet_model_forward(a, x.as_ptr(), 1, la.as_mut_ptr(), 2);
        sfnet_model_forward(b, x.as_ptr(), 1, lb.as_mut_ptr(), 2);
        sfnet_model_free(a);
        sfnet_model_free(b);
    }
    assert_eq!(la, lb);
}

#[test]
fn metrics_and_auc() {
    let mut m = SfnetMetrics { acc: 0.0, sen: 0.0, spe: 0.0, f1: 0.0 };
    assert_eq!(unsafe { sfnet_metrics(50, 5, 10, 35, &mut m) }, SfnetStatus::Ok);
    assert!((m.acc - 0.85).abs() < 1e-12);
    assert!((m.sen - 50.0 / 55.0).abs() < 1e-12);
    assert!((m.spe - 35.0 / 45.0).abs() < 1e-12);
    assert!((m.f1 - 100.0 / 115.0).abs() < 1e-12);
    assert_eq!(unsafe { sfnet_metrics(0, 0, 0, 5, &mut m) }, SfnetStatus::Ok);
    assert!(m.sen.is_nan() && m.f1.is_nan() && m.spe == 1.0);

    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut a = 0.0;
    assert_eq!(unsafe { sfnet_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut a) }, SfnetStatus::Ok);
    assert!((a - 0.75).abs() < 1e-12);
    assert_eq!(unsafe { sfnet_auc(scores.as_ptr(), [1u8; 4].as_ptr(), 4, &mut a) }, SfnetStatus::InvalidArgument);
}

#[test]
fn generated_header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/sfnet.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["sfnet_model_new_tiny", "sfnet_model_forward", "sfnet_model_free", "sfnet_last_error", "sfnet_auc"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).status() else {
        eprintln!("no C compiler available; header syntax not checked");
        return;
    };
    assert!(status.success());
}
