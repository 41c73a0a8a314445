//! Exercises the C ABI the way a foreign caller would: raw pointers,
//! NUL-terminated strings, status codes.

use std::ffi::{CStr, CString};
use std::ptr;

use hatefuse::corpus::{self, SplitTag};
use hatefuse::model::EnsembleModel;
use hatefuse::synth::{self, CorpusMode};
use hatefuse::trainer::{self, TrainConfig};
use hatefuse::vision::PreprocessConfig;
use hatefuse_ffi::{
    hf_last_error, hf_model_free, hf_model_load, hf_model_predict, hf_version, HfModel, HfStatus,
};

/// Train a tiny model on a synthetic corpus and save a checkpoint.
fn make_checkpoint(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf, String) {
    let (manifest_path, samples) =
        synth::generate_corpus(&dir.join("corpus"), 8, CorpusMode::Separable).unwrap();
    let mut manifest = corpus::load_manifest(&manifest_path, SplitTag::Train).unwrap();
    for s in &mut manifest.samples {
        let sidecar = format!("{}.txt", s.image_path.display());
        s.ocr_text = Some(std::fs::read_to_string(sidecar).unwrap());
    }

    let model_cfg = hatefuse::model::ModelConfig {
        seed: 5,
        vision_native_dim: 64,
        max_seq_len: 16,
        preprocess: PreprocessConfig {
            height: 32,
            width: 32,
            ..PreprocessConfig::default()
        },
        ..hatefuse::model::ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 1e-2,
        max_seq_len: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut model = EnsembleModel::new(model_cfg).unwrap();
    let outcome = trainer::fit(&cfg, &manifest, &manifest, &mut model).unwrap();
    let ckpt = dir.join("model.ckpt");
    trainer::save_checkpoint(&outcome.final_checkpoint, &ckpt).unwrap();
    (ckpt, samples[0].image_path.clone(), samples[0].text.clone())
}

#[test]
fn version_is_a_nul_terminated_string() {
    let v = unsafe { CStr::from_ptr(hf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_predict_free_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, image, text) = make_checkpoint(dir.path());

    let ckpt_c = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle: *mut HfModel = ptr::null_mut();
    let status = unsafe { hf_model_load(ckpt_c.as_ptr(), &mut handle) };
    assert_eq!(status, HfStatus::Ok);
    assert!(!handle.is_null());

    let image_c = CString::new(image.to_str().unwrap()).unwrap();
    let text_c = CString::new(text).unwrap();
    let mut label: i32 = -1;
    let mut confidence: f64 = -1.0;
    let status = unsafe {
        hf_model_predict(
            handle,
            image_c.as_ptr(),
            text_c.as_ptr(),
            &mut label,
            &mut confidence,
        )
    };
    assert_eq!(status, HfStatus::Ok);
    assert!(label == 0 || label == 1, "label {label}");
    assert!((0.5..=1.0).contains(&confidence), "confidence {confidence}");

    unsafe { hf_model_free(handle) };
}

#[test]
fn null_arguments_yield_status_codes_not_crashes() {
    let mut handle: *mut HfModel = ptr::null_mut();
    let status = unsafe { hf_model_load(ptr::null(), &mut handle) };
    assert_eq!(status, HfStatus::NullArgument);
    assert!(handle.is_null());

    let ckpt_c = CString::new("whatever.ckpt").unwrap();
    let status = unsafe { hf_model_load(ckpt_c.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, HfStatus::NullArgument);

    let mut label = 0i32;
    let mut conf = 0f64;
    let status = unsafe {
        hf_model_predict(
            ptr::null_mut(),
            ptr::null(),
            ptr::null(),
            &mut label,
            &mut conf,
        )
    };
    assert_eq!(status, HfStatus::NullArgument);

    // freeing NULL is a no-op
    unsafe { hf_model_free(ptr::null_mut()) };
}

#[test]
fn missing_checkpoint_sets_last_error() {
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut handle: *mut HfModel = ptr::null_mut();
    let status = unsafe { hf_model_load(missing.as_ptr(), &mut handle) };
    assert_eq!(status, HfStatus::CheckpointError);
    assert!(handle.is_null());
    let msg = unsafe { CStr::from_ptr(hf_last_error()) }.to_str().unwrap();
    assert!(msg.contains("model.ckpt"), "last error: {msg}");
}

#[test]
fn unreadable_image_is_a_prediction_error() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _, _) = make_checkpoint(dir.path());

    let ckpt_c = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut handle: *mut HfModel = ptr::null_mut();
    assert_eq!(
        unsafe { hf_model_load(ckpt_c.as_ptr(), &mut handle) },
        HfStatus::Ok
    );

    let bogus = CString::new(dir.path().join("missing.png").to_str().unwrap().to_string()).unwrap();
    let text = CString::new("whatever").unwrap();
    let mut label = 0i32;
    let mut conf = 0f64;
    let status =
        unsafe { hf_model_predict(handle, bogus.as_ptr(), text.as_ptr(), &mut label, &mut conf) };
    assert_eq!(status, HfStatus::PredictionError);
    let msg = unsafe { CStr::from_ptr(hf_last_error()) }.to_str().unwrap();
    assert!(!msg.is_empty());

    unsafe { hf_model_free(handle) };
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hatefuse.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "HfStatus",
        "HfModel",
        "hf_version",
        "hf_model_load",
        "hf_model_free",
        "hf_model_predict",
        "hf_last_error",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
