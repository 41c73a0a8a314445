//! The assembled ensemble: branch backbones, fusion, and head, with manual
//! backprop through every trainable layer.
//!
//! Ablation variants are the same machinery with a subset of branches; the
//! head input is re-dimensioned to 512 per active branch by default, or kept
//! at 1536 with zero-filled blocks when `zero_fill_missing` is set.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::corpus::Sample;
use crate::fusion::{self, ClassificationHead, FusedFeature, FusionError, Prediction};
use crate::nn::{relu, relu_backward, AdamState, LinearGrad};
use crate::text::{self, SpecialTokenLayout, TextBackbone, TextError};
use crate::vision::{self, PreprocessConfig, VisionBackbone, VisionError};
use crate::FEATURE_DIM;

/// The three branch slots in their fixed fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Vision,
    TextA,
    TextB,
}

impl BranchKind {
    pub const ALL: [BranchKind; 3] = [BranchKind::Vision, BranchKind::TextA, BranchKind::TextB];
}

/// Where a branch's frozen trunk comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSource {
    Stub,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub branches: Vec<BranchKind>,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub max_seq_len: usize,
    pub vision_native_dim: usize,
    pub vision_source: BackboneSource,
    pub text_a_source: BackboneSource,
    pub text_b_source: BackboneSource,
    /// Keep the head at 1536 inputs and zero-fill missing branches instead
    /// of re-dimensioning.
    pub zero_fill_missing: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            branches: BranchKind::ALL.to_vec(),
            seed: 0,
            preprocess: PreprocessConfig::default(),
            max_seq_len: 512,
            vision_native_dim: 2048,
            vision_source: BackboneSource::Stub,
            text_a_source: BackboneSource::Stub,
            text_b_source: BackboneSource::Stub,
            zero_fill_missing: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("model has no branches")]
    NoBranches,
    #[error("duplicate branch {0:?} in model config")]
    DuplicateBranch(BranchKind),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnsembleModel {
    pub config: ModelConfig,
    pub vision: Option<VisionBackbone>,
    pub text_a: Option<TextBackbone>,
    pub text_b: Option<TextBackbone>,
    pub head: ClassificationHead,
}

/// Frozen trunk outputs for one sample; everything upstream of the
/// trainable layers. Computable once per sample and reused across epochs.
#[derive(Debug, Clone)]
pub struct BranchInputs {
    pub vision_trunk: Option<Array1<f64>>,
    pub text_a_pooled: Option<Array1<f64>>,
    pub text_b_pooled: Option<Array1<f64>>,
}

/// Intermediate activations kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub branch_pre: Vec<(BranchKind, Array1<f64>)>,
    pub fused: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: [f64; 2],
}

/// Gradient buffers for every trainable layer present in the model.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub vision_proj: Option<LinearGrad>,
    pub text_a_proj: Option<LinearGrad>,
    pub text_b_proj: Option<LinearGrad>,
    pub head1: LinearGrad,
    pub head2: LinearGrad,
}

impl ModelGrads {
    pub fn zeros_like(model: &EnsembleModel) -> ModelGrads {
        ModelGrads {
            vision_proj: model
                .vision
                .as_ref()
                .map(|b| LinearGrad::zeros_like(&b.projection)),
            text_a_proj: model
                .text_a
                .as_ref()
                .map(|b| LinearGrad::zeros_like(&b.projection)),
            text_b_proj: model
                .text_b
                .as_ref()
                .map(|b| LinearGrad::zeros_like(&b.projection)),
            head1: LinearGrad::zeros_like(&model.head.layer1),
            head2: LinearGrad::zeros_like(&model.head.layer2),
        }
    }

    pub fn reset(&mut self) {
        if let Some(g) = &mut self.vision_proj {
            g.reset();
        }
        if let Some(g) = &mut self.text_a_proj {
            g.reset();
        }
        if let Some(g) = &mut self.text_b_proj {
            g.reset();
        }
        self.head1.reset();
        self.head2.reset();
    }
}

/// Adam optimizer state for every trainable layer present in the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamStates {
    pub vision_proj: Option<AdamState>,
    pub text_a_proj: Option<AdamState>,
    pub text_b_proj: Option<AdamState>,
    pub head1: AdamState,
    pub head2: AdamState,
}

impl AdamStates {
    pub fn zeros_like(model: &EnsembleModel) -> AdamStates {
        AdamStates {
            vision_proj: model
                .vision
                .as_ref()
                .map(|b| AdamState::zeros_like(&b.projection)),
            text_a_proj: model
                .text_a
                .as_ref()
                .map(|b| AdamState::zeros_like(&b.projection)),
            text_b_proj: model
                .text_b
                .as_ref()
                .map(|b| AdamState::zeros_like(&b.projection)),
            head1: AdamState::zeros_like(&model.head.layer1),
            head2: AdamState::zeros_like(&model.head.layer2),
        }
    }
}

impl EnsembleModel {
    pub fn new(config: ModelConfig) -> Result<EnsembleModel, ModelError> {
        if config.branches.is_empty() {
            return Err(ModelError::NoBranches);
        }
        let mut sorted = config.branches.clone();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(ModelError::DuplicateBranch(w[0]));
            }
        }
        let mut config = config;
        config.branches = sorted;

        let has = |k: BranchKind| config.branches.contains(&k);

        let vision = if has(BranchKind::Vision) {
            Some(match &config.vision_source {
                BackboneSource::Stub => VisionBackbone::stub(
                    config.seed ^ 0x10,
                    config.vision_native_dim,
                    config.preprocess,
                ),
                BackboneSource::Pretrained(dir) => {
                    VisionBackbone::pretrained(dir, config.seed ^ 0x10, config.preprocess)?
                }
            })
        } else {
            None
        };
        let text_a = if has(BranchKind::TextA) {
            Some(match &config.text_a_source {
                BackboneSource::Stub => TextBackbone::stub(
                    "stub-text-a",
                    config.seed ^ 0x20,
                    SpecialTokenLayout::ClsFirst,
                ),
                BackboneSource::Pretrained(dir) => TextBackbone::pretrained(
                    dir,
                    "text_a",
                    config.seed ^ 0x20,
                    SpecialTokenLayout::ClsFirst,
                    text::PoolingRule::FirstToken,
                )?,
            })
        } else {
            None
        };
        let text_b = if has(BranchKind::TextB) {
            Some(match &config.text_b_source {
                BackboneSource::Stub => TextBackbone::stub(
                    "stub-text-b",
                    config.seed ^ 0x30,
                    SpecialTokenLayout::ClsLast,
                ),
                BackboneSource::Pretrained(dir) => TextBackbone::pretrained(
                    dir,
                    "text_b",
                    config.seed ^ 0x30,
                    SpecialTokenLayout::ClsLast,
                    text::PoolingRule::LastToken,
                )?,
            })
        } else {
            None
        };

        let head_in = if config.zero_fill_missing {
            3 * FEATURE_DIM
        } else {
            config.branches.len() * FEATURE_DIM
        };
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0x40);
        let head = ClassificationHead::seeded(head_in, &mut rng);

        Ok(EnsembleModel {
            config,
            vision,
            text_a,
            text_b,
            head,
        })
    }

    /// Compute the frozen trunk outputs for one sample. The sample must have
    /// its OCR text resolved when a text branch is active.
    pub fn branch_inputs(&self, sample: &Sample) -> Result<BranchInputs, ModelError> {
        let vision_trunk = match &self.vision {
            Some(bb) => {
                let tensor = vision::preprocess_image(&sample.image_path, &bb.preprocess)?;
                Some(bb.trunk_features(&tensor)?)
            }
            None => None,
        };
        let need_text = self.text_a.is_some() || self.text_b.is_some();
        let ocr_text = if need_text {
            Some(sample.ocr_text.clone().ok_or_else(|| {
                ModelError::Fusion(FusionError::MissingText(sample.index.clone()))
            })?)
        } else {
            None
        };
        let text_a_pooled = match &self.text_a {
            Some(bb) => {
                let tokens =
                    text::tokenize(ocr_text.as_ref().unwrap(), bb, self.config.max_seq_len)?;
                Some(bb.pooled(&tokens)?)
            }
            None => None,
        };
        let text_b_pooled = match &self.text_b {
            Some(bb) => {
                let tokens =
                    text::tokenize(ocr_text.as_ref().unwrap(), bb, self.config.max_seq_len)?;
                Some(bb.pooled(&tokens)?)
            }
            None => None,
        };
        Ok(BranchInputs {
            vision_trunk,
            text_a_pooled,
            text_b_pooled,
        })
    }

    /// Forward pass from trunk outputs, keeping activations for backprop.
    pub fn forward_cached(&self, inputs: &BranchInputs) -> Result<ForwardCache, ModelError> {
        let mut branch_pre = Vec::new();
        let mut blocks: Vec<(BranchKind, Array1<f64>)> = Vec::new();
        for kind in &self.config.branches {
            let (pre, feat) = match kind {
                BranchKind::Vision => {
                    let bb = self.vision.as_ref().expect("vision branch present");
                    let trunk = inputs.vision_trunk.as_ref().expect("vision trunk input");
                    let pre = bb.projection.forward(trunk);
                    let feat = relu(&pre);
                    (pre, feat)
                }
                BranchKind::TextA => {
                    let bb = self.text_a.as_ref().expect("text_a branch present");
                    let pooled = inputs.text_a_pooled.as_ref().expect("text_a pooled input");
                    let pre = bb.projection.forward(pooled);
                    let feat = relu(&pre);
                    (pre, feat)
                }
                BranchKind::TextB => {
                    let bb = self.text_b.as_ref().expect("text_b branch present");
                    let pooled = inputs.text_b_pooled.as_ref().expect("text_b pooled input");
                    let pre = bb.projection.forward(pooled);
                    let feat = relu(&pre);
                    (pre, feat)
                }
            };
            branch_pre.push((*kind, pre));
            blocks.push((*kind, feat));
        }

        let fused = if self.config.zero_fill_missing {
            let mut v = Array1::zeros(3 * FEATURE_DIM);
            for (kind, feat) in &blocks {
                let offset = match kind {
                    BranchKind::Vision => 0,
                    BranchKind::TextA => FEATURE_DIM,
                    BranchKind::TextB => 2 * FEATURE_DIM,
                };
                v.slice_mut(ndarray::s![offset..offset + FEATURE_DIM])
                    .assign(feat);
            }
            v
        } else {
            let mut v = Array1::zeros(blocks.len() * FEATURE_DIM);
            for (i, (_, feat)) in blocks.iter().enumerate() {
                v.slice_mut(ndarray::s![i * FEATURE_DIM..(i + 1) * FEATURE_DIM])
                    .assign(feat);
            }
            v
        };

        let hidden_pre = self.head.layer1.forward(&fused);
        let hidden = relu(&hidden_pre);
        let logits_arr = self.head.layer2.forward(&hidden);
        Ok(ForwardCache {
            branch_pre,
            fused,
            hidden_pre,
            hidden,
            logits: [logits_arr[0], logits_arr[1]],
        })
    }

    /// Accumulate gradients for one sample given d loss / d logits.
    /// `train_projections` false skips branch-projection gradients
    /// (freeze-branches mode).
    pub fn backward(
        &self,
        inputs: &BranchInputs,
        cache: &ForwardCache,
        dlogits: [f64; 2],
        grads: &mut ModelGrads,
        train_projections: bool,
    ) {
        let dl = Array1::from_vec(dlogits.to_vec());
        let dhidden = self
            .head
            .layer2
            .backward(&cache.hidden, &dl, &mut grads.head2);
        let dhidden_pre = relu_backward(&cache.hidden_pre, &dhidden);
        let dfused = self
            .head
            .layer1
            .backward(&cache.fused, &dhidden_pre, &mut grads.head1);

        if !train_projections {
            return;
        }
        for (i, (kind, pre)) in cache.branch_pre.iter().enumerate() {
            let offset = if self.config.zero_fill_missing {
                match kind {
                    BranchKind::Vision => 0,
                    BranchKind::TextA => FEATURE_DIM,
                    BranchKind::TextB => 2 * FEATURE_DIM,
                }
            } else {
                i * FEATURE_DIM
            };
            let dfeat = dfused
                .slice(ndarray::s![offset..offset + FEATURE_DIM])
                .to_owned();
            let dpre = relu_backward(pre, &dfeat);
            match kind {
                BranchKind::Vision => {
                    let bb = self.vision.as_ref().unwrap();
                    let x = inputs.vision_trunk.as_ref().unwrap();
                    bb.projection
                        .backward(x, &dpre, grads.vision_proj.as_mut().unwrap());
                }
                BranchKind::TextA => {
                    let bb = self.text_a.as_ref().unwrap();
                    let x = inputs.text_a_pooled.as_ref().unwrap();
                    bb.projection
                        .backward(x, &dpre, grads.text_a_proj.as_mut().unwrap());
                }
                BranchKind::TextB => {
                    let bb = self.text_b.as_ref().unwrap();
                    let x = inputs.text_b_pooled.as_ref().unwrap();
                    bb.projection
                        .backward(x, &dpre, grads.text_b_proj.as_mut().unwrap());
                }
            }
        }
    }

    /// End-to-end inference on one sample: preprocess, encode the active
    /// branches, fuse, classify.
    pub fn forward(&self, sample: &Sample) -> Result<Prediction, ModelError> {
        let inputs = self.branch_inputs(sample)?;
        let cache = self.forward_cached(&inputs)?;
        Ok(fusion::predict(cache.logits)?)
    }

    /// Fused embedding for one sample (diagnostics; full ensemble only).
    pub fn fused_embedding(&self, sample: &Sample) -> Result<FusedFeature, ModelError> {
        let inputs = self.branch_inputs(sample)?;
        let cache = self.forward_cached(&inputs)?;
        Ok(FusedFeature {
            vector: cache.fused,
        })
    }
}

/// Anything that maps a sample to a prediction; lets report code run against
/// scripted predictors in tests.
pub trait Predictor {
    fn predict_sample(&self, sample: &Sample) -> Result<Prediction, ModelError>;
}

impl Predictor for EnsembleModel {
    fn predict_sample(&self, sample: &Sample) -> Result<Prediction, ModelError> {
        self.forward(sample)
    }
}
