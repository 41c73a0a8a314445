//! Regenerates the frozen regression-fixture constants used by the in-module
//! encoder tests, and cross-checks the seeded-head fixture against an
//! independent matrix-arithmetic oracle.
//!
//! Run `cargo test --test freeze_fixtures -- --ignored --nocapture` to print
//! fresh values after an intentional change to the seeded constructions.

use hatefuse::fusion::{head_forward, ClassificationHead, FusedFeature, FUSED_DIM};
use hatefuse::nn::Linear;
use hatefuse::text::{encode_text, tokenize, SpecialTokenLayout, TextBackbone, TextRole};
use hatefuse::vision::{encode_image, ImageTensor, PreprocessConfig, VisionBackbone};
use hatefuse::FEATURE_DIM;
use ndarray::{Array1, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn vision_fixture_vector() -> Array1<f64> {
    let pp = PreprocessConfig {
        height: 16,
        width: 16,
        ..PreprocessConfig::default()
    };
    let mut bb = VisionBackbone::stub(42, FEATURE_DIM, pp);
    bb.projection = Linear::identity(FEATURE_DIM);
    let zeros = ImageTensor::new(Array3::zeros((3, 16, 16))).unwrap();
    encode_image(&zeros, &bb).unwrap().vector
}

fn text_fixture_vector() -> Array1<f64> {
    let bb = TextBackbone::stub("stub-text-a", 11, SpecialTokenLayout::ClsFirst);
    let seq = tokenize("hello", &bb, 16).unwrap();
    encode_text(&seq, &bb, TextRole::F2).unwrap().vector
}

fn head_fixture() -> (ClassificationHead, FusedFeature) {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let head = ClassificationHead::seeded(FUSED_DIM, &mut rng);
    let f4 = FusedFeature {
        vector: Array1::from_shape_fn(FUSED_DIM, |i| ((i as f64) * 0.01).sin()),
    };
    (head, f4)
}

/// Independent oracle: explicit dot-product loops over the raw weight
/// matrices, no reuse of the library's forward code.
fn head_logits_by_hand(head: &ClassificationHead, f4: &FusedFeature) -> [f64; 2] {
    let l1 = &head.layer1;
    let mut hidden = vec![0.0f64; l1.out_dim()];
    for (o, h) in hidden.iter_mut().enumerate() {
        let mut acc = l1.bias[o];
        for i in 0..l1.in_dim() {
            acc += l1.weight[[o, i]] * f4.vector[i];
        }
        *h = acc.max(0.0); // rectifier after the hidden layer
    }
    let l2 = &head.layer2;
    let mut logits = [0.0f64; 2];
    for (o, lg) in logits.iter_mut().enumerate() {
        let mut acc = l2.bias[o];
        for (i, h) in hidden.iter().enumerate() {
            acc += l2.weight[[o, i]] * h;
        }
        *lg = acc; // no rectifier on the output layer
    }
    logits
}

#[test]
fn head_forward_matches_independent_matrix_oracle() {
    let (head, f4) = head_fixture();
    let logits = head_forward(&f4, &head).unwrap();
    let oracle = head_logits_by_hand(&head, &f4);
    assert!(
        (logits[0] - oracle[0]).abs() < 1e-12,
        "{} vs {}",
        logits[0],
        oracle[0]
    );
    assert!(
        (logits[1] - oracle[1]).abs() < 1e-12,
        "{} vs {}",
        logits[1],
        oracle[1]
    );
}

#[test]
#[ignore = "prints fresh fixture constants; run manually after intentional changes"]
fn regenerate_frozen_fixture_constants() {
    let v = vision_fixture_vector();
    println!("vision head: {:?}", &v.as_slice().unwrap()[..4]);
    println!("vision checksum: {:?}", v.sum());

    let t = text_fixture_vector();
    println!("text head: {:?}", &t.as_slice().unwrap()[..4]);
    println!("text checksum: {:?}", t.sum());

    let (head, f4) = head_fixture();
    let logits = head_logits_by_hand(&head, &f4);
    println!("head logits: {:?}", logits);
}
