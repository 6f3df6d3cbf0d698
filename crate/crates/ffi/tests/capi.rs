use std::ffi::{CStr, CString};
use std::ptr;

use anodet_core::anomaly_scorer::{anomaly_score, reconstruct, Metric};
use anodet_core::tensor::Array;
use anodet_core::translator::{Checkpoint, Domain, TranslatorConfig, TranslatorModel};
use anodet_ffi::*;

fn small() -> TranslatorConfig {
    TranslatorConfig {
        base_width: 4,
        n_res: 1,
        style_downsample: 2,
        mlp_dim: 8,
        upsample_kernel: 3,
        dis_width: 4,
        dis_layers: 2,
        dis_scales: 1,
        ..TranslatorConfig::default()
    }
}

fn image(h: usize, w: usize, phase: f32) -> Vec<f32> {
    (0..3 * h * w).map(|i| ((i as f32) * 0.37 + phase).sin() * 0.8).collect()
}

fn last_error() -> String {
    let p = anodet_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Loaded {
    _dir: tempfile::TempDir,
    model: TranslatorModel<f32>,
    handle: *mut AnodetModel,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { anodet_model_free(self.handle) };
    }
}

fn load() -> Loaded {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = TranslatorModel::<f32>::new(small(), 11).unwrap();
    Checkpoint {
        model: model.clone(),
        train: None,
    }
    .save(&path)
    .unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { anodet_model_load(c.as_ptr(), &mut handle) }, AnodetStatus::Ok);
    assert!(!handle.is_null());
    Loaded {
        _dir: dir,
        model,
        handle,
    }
}

#[test]
fn reconstruct_and_score_match_library() {
    let l = load();
    let (h, w) = (16, 16);
    let x = image(h, w, 0.3);
    let mut out = vec![0f32; x.len()];
    let st = unsafe { anodet_reconstruct(l.handle, x.as_ptr(), h, w, 0, 1, out.as_mut_ptr()) };
    assert_eq!(st, AnodetStatus::Ok);
    let xa = Array::from_vec(&[3, h, w], x.clone()).unwrap();
    let want = reconstruct(&xa, &l.model, Domain::X, Domain::Y).unwrap();
    assert_eq!(out, want.data());

    let mut s = f64::NAN;
    let st = unsafe { anodet_score(l.handle, AnodetMetric::Ssim as u32, x.as_ptr(), h, w, &mut s) };
    assert_eq!(st, AnodetStatus::Ok);
    assert_eq!(s, anomaly_score(&xa, &l.model, Metric::Ssim).unwrap());

    let mut dim = 0usize;
    assert_eq!(unsafe { anodet_model_style_dim(l.handle, &mut dim) }, AnodetStatus::Ok);
    assert_eq!(dim, 8);
}

#[test]
fn argument_errors_set_codes_and_messages() {
    let l = load();
    let x = image(16, 16, 0.0);
    let mut s = 0.0;
    let st = unsafe { anodet_score(l.handle, 7, x.as_ptr(), 16, 16, &mut s) };
    assert_eq!(st, AnodetStatus::InvalidArgument);
    assert!(last_error().contains("metric"));

    let st = unsafe { anodet_score(ptr::null(), 0, x.as_ptr(), 16, 16, &mut s) };
    assert_eq!(st, AnodetStatus::NullPointer);
    assert!(last_error().contains("model"));

    let mut out = vec![0f32; x.len()];
    let st = unsafe { anodet_reconstruct(l.handle, x.as_ptr(), 16, 16, 2, 1, out.as_mut_ptr()) };
    assert_eq!(st, AnodetStatus::InvalidArgument);

    // Success clears the message.
    let st = unsafe { anodet_score(l.handle, 0, x.as_ptr(), 16, 16, &mut s) };
    assert_eq!(st, AnodetStatus::Ok);
    assert!(anodet_last_error_message().is_null());
}

#[test]
fn load_failures() {
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { anodet_model_load(missing.as_ptr(), &mut h) }, AnodetStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    let st = unsafe { anodet_model_load(junk.as_ptr(), &mut h) };
    assert_ne!(st, AnodetStatus::Ok);
    assert!(h.is_null());
    unsafe { anodet_model_free(ptr::null_mut()) };
}

#[test]
fn metric_helpers() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut v = 0.0;
    assert_eq!(unsafe { anodet_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut v) }, AnodetStatus::Ok);
    assert_eq!(v, 0.75);

    let scores = [0.8, 0.6, 0.4, 0.2];
    let labels = [1u8, 0, 1, 0];
    assert_eq!(
        unsafe { anodet_average_precision(scores.as_ptr(), labels.as_ptr(), 4, &mut v) },
        AnodetStatus::Ok
    );
    assert_eq!(v, 5.0 / 6.0);

    let one_class = [1u8, 1];
    assert_eq!(
        unsafe { anodet_auc(scores.as_ptr(), one_class.as_ptr(), 2, &mut v) },
        AnodetStatus::DegenerateInput
    );

    let a = image(16, 16, 1.0);
    assert_eq!(unsafe { anodet_ssim(a.as_ptr(), a.as_ptr(), 3, 16, 16, &mut v) }, AnodetStatus::Ok);
    assert!((v - 1.0).abs() < 1e-9);
    assert_eq!(unsafe { anodet_ssim(a.as_ptr(), a.as_ptr(), 3, 4, 4, &mut v) }, AnodetStatus::InvalidArgument);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(anodet_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/anodet.h")).unwrap();
    for name in [
        "typedef struct AnodetModel AnodetModel;",
        "ANODET_STATUS_NULL_POINTER = 1",
        "ANODET_METRIC_PERCEPTUAL = 1",
        "anodet_model_load(",
        "anodet_reconstruct(",
        "anodet_score(",
        "anodet_ssim(",
        "anodet_auc(",
        "anodet_average_precision(",
        "anodet_last_error_message(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
