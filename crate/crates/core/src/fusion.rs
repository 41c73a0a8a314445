//! Feature fusion and the classification head.
//!
//! F1 (vision), F2 and F3 (text) are concatenated in that fixed order into
//! the 1536-d F4, which feeds a 1536 -> 128 -> 2 head. The rectifier sits
//! after the hidden layer only, so logits can take either sign.

use ndarray::Array1;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::nn::{relu, softmax, Linear};
use crate::text::{TextFeature, TextRole};
use crate::vision::VisionFeature;
use crate::FEATURE_DIM;

pub const FUSED_DIM: usize = 3 * FEATURE_DIM;
pub const HIDDEN_DIM: usize = 128;
pub const NUM_LOGITS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature {
    pub vector: Array1<f64>,
}

/// Two-layer head over the fused embedding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassificationHead {
    pub layer1: Linear,
    pub layer2: Linear,
}

impl ClassificationHead {
    /// Head for a fused embedding of `in_dim` (1536 for the full ensemble;
    /// ablation variants re-dimension).
    pub fn seeded(in_dim: usize, rng: &mut ChaCha20Rng) -> ClassificationHead {
        ClassificationHead {
            layer1: Linear::seeded(HIDDEN_DIM, in_dim, rng),
            layer2: Linear::seeded(NUM_LOGITS, HIDDEN_DIM, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layer1.in_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probabilities: [f64; 2],
    pub label: Label,
    pub confidence: f64,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("branch role mismatch: expected {expected}, got {got}")]
    RoleMismatch { expected: String, got: String },
    #[error("logits are not finite: ({0}, {1})")]
    NonFiniteLogits(f64, f64),
    #[error("sample `{0}` has no OCR text")]
    MissingText(String),
}

/// Concatenate F1 || F2 || F3 into F4.
pub fn fuse(
    f1: &VisionFeature,
    f2: &TextFeature,
    f3: &TextFeature,
) -> Result<FusedFeature, FusionError> {
    for (v, name) in [(&f1.vector, "F1"), (&f2.vector, "F2"), (&f3.vector, "F3")] {
        if v.len() != FEATURE_DIM {
            let _ = name;
            return Err(FusionError::ShapeMismatch {
                expected: FEATURE_DIM,
                got: v.len(),
            });
        }
    }
    if f2.role != TextRole::F2 {
        return Err(FusionError::RoleMismatch {
            expected: "F2".into(),
            got: format!("{:?}", f2.role),
        });
    }
    if f3.role != TextRole::F3 {
        return Err(FusionError::RoleMismatch {
            expected: "F3".into(),
            got: format!("{:?}", f3.role),
        });
    }
    let mut vector = Array1::zeros(FUSED_DIM);
    vector
        .slice_mut(ndarray::s![0..FEATURE_DIM])
        .assign(&f1.vector);
    vector
        .slice_mut(ndarray::s![FEATURE_DIM..2 * FEATURE_DIM])
        .assign(&f2.vector);
    vector
        .slice_mut(ndarray::s![2 * FEATURE_DIM..3 * FEATURE_DIM])
        .assign(&f3.vector);
    Ok(FusedFeature { vector })
}

/// logits = layer2(relu(layer1(f4))); no rectifier after the final layer.
pub fn head_forward(f4: &FusedFeature, head: &ClassificationHead) -> Result<[f64; 2], FusionError> {
    if f4.vector.len() != head.in_dim() {
        return Err(FusionError::ShapeMismatch {
            expected: head.in_dim(),
            got: f4.vector.len(),
        });
    }
    let hidden = relu(&head.layer1.forward(&f4.vector));
    let logits = head.layer2.forward(&hidden);
    Ok([logits[0], logits[1]])
}

/// Softmax over the logits; argmax label; exact ties go to code 0
/// (NoHateSpeech).
pub fn predict(logits: [f64; 2]) -> Result<Prediction, FusionError> {
    if !logits[0].is_finite() || !logits[1].is_finite() {
        return Err(FusionError::NonFiniteLogits(logits[0], logits[1]));
    }
    let probs = softmax(&Array1::from_vec(logits.to_vec()));
    let label = if logits[1] > logits[0] {
        Label::HateSpeech
    } else {
        Label::NoHateSpeech
    };
    Ok(Prediction {
        logits,
        probabilities: [probs[0], probs[1]],
        label,
        confidence: probs[label.code()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit_f(role: Option<TextRole>, hot: Option<usize>) -> Array1<f64> {
        let _ = role;
        let mut v = Array1::zeros(FEATURE_DIM);
        if let Some(i) = hot {
            v[i] = 1.0;
        }
        v
    }

    fn vf(hot: Option<usize>) -> VisionFeature {
        VisionFeature {
            vector: unit_f(None, hot),
        }
    }

    fn tf(role: TextRole, hot: Option<usize>) -> TextFeature {
        TextFeature {
            vector: unit_f(Some(role), hot),
            role,
        }
    }

    #[test]
    fn concatenation_order_is_f1_f2_f3() {
        let f4 = fuse(
            &vf(Some(0)),
            &tf(TextRole::F2, None),
            &tf(TextRole::F3, None),
        )
        .unwrap();
        assert_eq!(f4.vector[0], 1.0);
        assert_eq!(f4.vector.sum(), 1.0);

        let f4 = fuse(
            &vf(None),
            &tf(TextRole::F2, None),
            &tf(TextRole::F3, Some(0)),
        )
        .unwrap();
        assert_eq!(f4.vector[1024], 1.0);
        assert_eq!(f4.vector.sum(), 1.0);
    }

    #[test]
    fn zero_inputs_fuse_to_zero_1536() {
        let f4 = fuse(&vf(None), &tf(TextRole::F2, None), &tf(TextRole::F3, None)).unwrap();
        assert_eq!(f4.vector.len(), FUSED_DIM);
        assert!(f4.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn role_mismatch_is_rejected() {
        let err = fuse(&vf(None), &tf(TextRole::F3, None), &tf(TextRole::F3, None));
        assert!(matches!(err, Err(FusionError::RoleMismatch { .. })));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let bad = VisionFeature {
            vector: Array1::zeros(100),
        };
        assert!(matches!(
            fuse(&bad, &tf(TextRole::F2, None), &tf(TextRole::F3, None)),
            Err(FusionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_input_zero_bias_head_gives_zero_logits() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let head = ClassificationHead::seeded(FUSED_DIM, &mut rng);
        // biases are zero-initialized
        let f4 = FusedFeature {
            vector: Array1::zeros(FUSED_DIM),
        };
        let logits = head_forward(&f4, &head).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
    }

    #[test]
    fn all_negative_hidden_rows_reduce_to_layer2_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut head = ClassificationHead::seeded(FUSED_DIM, &mut rng);
        head.layer1.weight.fill(-1.0);
        head.layer1.bias.fill(-0.5);
        head.layer2.bias = ndarray::array![0.25, -0.75];
        let f4 = FusedFeature {
            vector: Array1::from_elem(FUSED_DIM, 1.0),
        };
        let logits = head_forward(&f4, &head).unwrap();
        assert_eq!(logits, [0.25, -0.75]);
    }

    #[test]
    fn seeded_head_fixed_f4_matches_frozen_pair() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let head = ClassificationHead::seeded(FUSED_DIM, &mut rng);
        let f4 = FusedFeature {
            vector: Array1::from_shape_fn(FUSED_DIM, |i| ((i as f64) * 0.01).sin()),
        };
        let logits = head_forward(&f4, &head).unwrap();
        // Frozen by tests/freeze_fixtures.rs and cross-checked by the
        // independent matrix-arithmetic oracle there.
        assert!(
            (logits[0] - -0.03880926035120885).abs() < 1e-12,
            "{}",
            logits[0]
        );
        assert!(
            (logits[1] - -0.32378474089724735).abs() < 1e-12,
            "{}",
            logits[1]
        );
    }

    #[test]
    fn predict_matches_hand_computed_softmax() {
        // logits (3, 0): index 0 is NoHateSpeech and wins
        let p = predict([3.0, 0.0]).unwrap();
        assert_eq!(p.label, Label::NoHateSpeech);
        assert!((p.confidence - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-12);
        assert!((p.confidence - 0.9526).abs() < 1e-4);
    }

    #[test]
    fn exact_tie_breaks_to_no_hate_speech() {
        let p = predict([0.0, 0.0]).unwrap();
        assert_eq!(p.probabilities, [0.5, 0.5]);
        assert_eq!(p.label, Label::NoHateSpeech);
    }

    #[test]
    fn softmax_shift_invariance_quarter_three_quarters() {
        for c in [-5.0, 0.0, 3.3, 100.0] {
            let p = predict([c, c + 3.0f64.ln()]).unwrap();
            assert!((p.probabilities[0] - 0.25).abs() < 1e-12);
            assert!((p.probabilities[1] - 0.75).abs() < 1e-12);
            assert_eq!(p.label, Label::HateSpeech);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            predict([f64::NAN, 0.0]),
            Err(FusionError::NonFiniteLogits(..))
        ));
        assert!(matches!(
            predict([0.0, f64::INFINITY]),
            Err(FusionError::NonFiniteLogits(..))
        ));
    }
}
