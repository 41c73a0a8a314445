//! End-to-end training: weighted cross-entropy, Adam with weight decay,
//! step learning-rate schedule, per-epoch history, and resumable
//! checkpoints.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{DatasetManifest, Label, NUM_CLASSES};
use crate::model::{AdamStates, BranchInputs, EnsembleModel, ModelError, ModelGrads};
use crate::nn::{adam_step, softmax, step_lr, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_seq_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_step_size: usize,
    pub lr_decay: f64,
    pub seed: u64,
    pub class_weights: [f64; NUM_CLASSES],
    pub freeze_branches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 3e-5,
            max_seq_len: 512,
            epochs: 100,
            batch_size: 32,
            lr_step_size: 30,
            lr_decay: 0.1,
            seed: 0,
            class_weights: [1.0, 1.0],
            freeze_branches: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0
            || self.weight_decay < 0.0
            || self.lr_decay <= 0.0
            || self.batch_size == 0
            || self.epochs == 0
            || self.lr_step_size == 0
            || self.class_weights.iter().any(|&w| w <= 0.0)
        {
            return Err(TrainError::BadConfig);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Delimited export: `epoch,train_loss,train_acc,val_loss,val_acc,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            ));
        }
        out
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: String,
    /// Number of completed epochs.
    pub epoch: usize,
    pub model: EnsembleModel,
    pub adam: AdamStates,
    pub history: TrainHistory,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration")]
    BadConfig,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("logits are not finite")]
    NonFiniteLogits,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("training manifest is empty")]
    EmptyManifest,
    #[error("sample `{0}` has no label")]
    UnlabeledSample(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint fingerprint mismatch: checkpoint {stored}, config {given}")]
    FingerprintMismatch { stored: String, given: String },
    #[error("corrupt checkpoint at {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("checkpoint io error at {path}: {source}")]
    CheckpointIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint was written by an unsupported version {0}")]
    UnsupportedVersion(u32),
}

/// Weighted cross-entropy over a batch:
/// sum_i w_{y_i} * (-log softmax(logits_i)_{y_i}) / sum_i w_{y_i}.
pub fn weighted_cross_entropy(
    logits: &[[f64; 2]],
    labels: &[Label],
    weights: [f64; NUM_CLASSES],
) -> Result<f64, TrainError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(TrainError::EmptyBatch);
    }
    let mut weighted_nll = 0.0;
    let mut weight_sum = 0.0;
    for (l, y) in logits.iter().zip(labels) {
        if !l[0].is_finite() || !l[1].is_finite() {
            return Err(TrainError::NonFiniteLogits);
        }
        let p = softmax(&ndarray::Array1::from_vec(l.to_vec()));
        let w = weights[y.code()];
        weighted_nll += w * -(p[y.code()].ln());
        weight_sum += w;
    }
    Ok(weighted_nll / weight_sum)
}

/// Batch loss plus d loss / d logits for each sample.
fn weighted_ce_with_grads(
    logits: &[[f64; 2]],
    labels: &[Label],
    weights: [f64; NUM_CLASSES],
) -> Result<(f64, Vec<[f64; 2]>), TrainError> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(TrainError::EmptyBatch);
    }
    let weight_sum: f64 = labels.iter().map(|y| weights[y.code()]).sum();
    let mut weighted_nll = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (l, y) in logits.iter().zip(labels) {
        if !l[0].is_finite() || !l[1].is_finite() {
            return Err(TrainError::NonFiniteLogits);
        }
        let p = softmax(&ndarray::Array1::from_vec(l.to_vec()));
        let w = weights[y.code()];
        weighted_nll += w * -(p[y.code()].ln());
        let mut g = [w * p[0] / weight_sum, w * p[1] / weight_sum];
        g[y.code()] -= w / weight_sum;
        grads.push(g);
    }
    Ok((weighted_nll / weight_sum, grads))
}

pub fn config_fingerprint(train: &TrainConfig, model: &crate::model::ModelConfig) -> String {
    // The epoch horizon is excluded: resuming a run to train further under
    // otherwise-identical settings is exactly what checkpoints are for.
    let mut train = train.clone();
    train.epochs = 0;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&train).expect("train config serializes"));
    hasher.update(serde_json::to_vec(model).expect("model config serializes"));
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn epoch_shuffle_seed(seed: u64, epoch: usize) -> u64 {
    let mut x = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

pub struct FitOutcome {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub history: TrainHistory,
}

fn labeled_features(
    model: &EnsembleModel,
    manifest: &DatasetManifest,
) -> Result<Vec<(BranchInputs, Label)>, TrainError> {
    if manifest.samples.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let mut out = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let label = s
            .label
            .ok_or_else(|| TrainError::UnlabeledSample(s.index.clone()))?;
        out.push((model.branch_inputs(s)?, label));
    }
    Ok(out)
}

fn evaluate_split(
    model: &EnsembleModel,
    feats: &[(BranchInputs, Label)],
    weights: [f64; NUM_CLASSES],
) -> Result<(f64, f64), TrainError> {
    let mut logits = Vec::with_capacity(feats.len());
    let mut labels = Vec::with_capacity(feats.len());
    let mut correct = 0usize;
    for (inputs, label) in feats {
        let cache = model.forward_cached(inputs)?;
        let pred = if cache.logits[1] > cache.logits[0] {
            Label::HateSpeech
        } else {
            Label::NoHateSpeech
        };
        if pred == *label {
            correct += 1;
        }
        logits.push(cache.logits);
        labels.push(*label);
    }
    let loss = weighted_cross_entropy(&logits, &labels, weights)?;
    Ok((loss, correct as f64 / feats.len() as f64))
}

/// Train from scratch. The model is updated in place; the outcome carries
/// the final and the best-validation-accuracy checkpoints.
pub fn fit(
    config: &TrainConfig,
    train: &DatasetManifest,
    validation: &DatasetManifest,
    model: &mut EnsembleModel,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    let mut adam = AdamStates::zeros_like(model);
    let mut history = TrainHistory::default();
    run_epochs(config, train, validation, model, &mut adam, &mut history, 0)
}

/// Continue training from a checkpoint under the same configuration.
/// The combined history equals an uninterrupted run's.
pub fn resume(
    checkpoint: Checkpoint,
    config: &TrainConfig,
    train: &DatasetManifest,
    validation: &DatasetManifest,
) -> Result<(EnsembleModel, FitOutcome), TrainError> {
    config.validate()?;
    let given = config_fingerprint(config, &checkpoint.model.config);
    if checkpoint.fingerprint != given {
        return Err(TrainError::FingerprintMismatch {
            stored: checkpoint.fingerprint,
            given,
        });
    }
    let mut model = checkpoint.model;
    let mut adam = checkpoint.adam;
    let mut history = checkpoint.history;
    let start = checkpoint.epoch;
    let outcome = run_epochs(
        config,
        train,
        validation,
        &mut model,
        &mut adam,
        &mut history,
        start,
    )?;
    Ok((model, outcome))
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    config: &TrainConfig,
    train: &DatasetManifest,
    validation: &DatasetManifest,
    model: &mut EnsembleModel,
    adam: &mut AdamStates,
    history: &mut TrainHistory,
    start_epoch: usize,
) -> Result<FitOutcome, TrainError> {
    let train_feats = labeled_features(model, train)?;
    let val_feats = labeled_features(model, validation)?;

    let fingerprint = config_fingerprint(config, &model.config);
    let adam_cfg = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let weights = config.class_weights;

    let snapshot = |model: &EnsembleModel,
                    adam: &AdamStates,
                    history: &TrainHistory,
                    epoch: usize| Checkpoint {
        version: CHECKPOINT_VERSION,
        fingerprint: fingerprint.clone(),
        epoch,
        model: model.clone(),
        adam: adam.clone(),
        history: history.clone(),
    };

    // Seed "best so far" from history when resuming.
    let mut best_acc = history
        .records
        .iter()
        .map(|r| r.val_acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best = snapshot(model, adam, history, start_epoch);
    let mut grads = ModelGrads::zeros_like(model);

    for epoch in start_epoch..config.epochs {
        let lr = step_lr(
            config.learning_rate,
            config.lr_decay,
            config.lr_step_size,
            epoch,
        );
        let mut order: Vec<usize> = (0..train_feats.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(epoch_shuffle_seed(config.seed, epoch));
        order.shuffle(&mut rng);

        let mut epoch_weighted_nll = 0.0;
        let mut epoch_weight_sum = 0.0;
        let mut correct = 0usize;

        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut caches = Vec::with_capacity(batch.len());
            let mut logits = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let cache = model.forward_cached(&train_feats[i].0)?;
                logits.push(cache.logits);
                labels.push(train_feats[i].1);
                caches.push(cache);
            }
            let (loss, dlogits) = weighted_ce_with_grads(&logits, &labels, weights)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            for (l, y) in logits.iter().zip(&labels) {
                let pred = if l[1] > l[0] {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                if pred == *y {
                    correct += 1;
                }
                epoch_weight_sum += weights[y.code()];
            }
            let batch_weight_sum: f64 = labels.iter().map(|y| weights[y.code()]).sum();
            epoch_weighted_nll += loss * batch_weight_sum;

            grads.reset();
            for ((&i, cache), dl) in batch.iter().zip(&caches).zip(&dlogits) {
                model.backward(
                    &train_feats[i].0,
                    cache,
                    *dl,
                    &mut grads,
                    !config.freeze_branches,
                );
            }
            apply_updates(model, &grads, adam, &adam_cfg, lr, config.freeze_branches);
        }

        let train_loss = epoch_weighted_nll / epoch_weight_sum;
        let train_acc = correct as f64 / train_feats.len() as f64;
        let (val_loss, val_acc) = evaluate_split(model, &val_feats, weights)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            lr,
        });

        if val_acc > best_acc {
            best_acc = val_acc;
            best = snapshot(model, adam, history, epoch + 1);
        }
    }

    let final_checkpoint = snapshot(model, adam, history, config.epochs);
    Ok(FitOutcome {
        final_checkpoint,
        best_checkpoint: best,
        history: history.clone(),
    })
}

fn apply_updates(
    model: &mut EnsembleModel,
    grads: &ModelGrads,
    adam: &mut AdamStates,
    cfg: &AdamConfig,
    lr: f64,
    freeze_branches: bool,
) {
    if !freeze_branches {
        if let (Some(bb), Some(g), Some(st)) = (
            model.vision.as_mut(),
            grads.vision_proj.as_ref(),
            adam.vision_proj.as_mut(),
        ) {
            adam_step(&mut bb.projection, g, st, cfg, lr);
        }
        if let (Some(bb), Some(g), Some(st)) = (
            model.text_a.as_mut(),
            grads.text_a_proj.as_ref(),
            adam.text_a_proj.as_mut(),
        ) {
            adam_step(&mut bb.projection, g, st, cfg, lr);
        }
        if let (Some(bb), Some(g), Some(st)) = (
            model.text_b.as_mut(),
            grads.text_b_proj.as_ref(),
            adam.text_b_proj.as_mut(),
        ) {
            adam_step(&mut bb.projection, g, st, cfg, lr);
        }
    }
    adam_step(
        &mut model.head.layer1,
        &grads.head1,
        &mut adam.head1,
        cfg,
        lr,
    );
    adam_step(
        &mut model.head.layer2,
        &grads.head2,
        &mut adam.head2,
        cfg,
        lr,
    );
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let bytes = bincode::serialize(checkpoint).map_err(|e| TrainError::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    std::fs::write(path, bytes).map_err(|source| TrainError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::CheckpointIo {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: Checkpoint =
        bincode::deserialize(&bytes).map_err(|e| TrainError::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(TrainError::UnsupportedVersion(ckpt.version));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let loss =
            weighted_cross_entropy(&[[0.0, 0.0]], &[Label::NoHateSpeech], [0.7, 3.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_single_sample_loss() {
        // label 1, logits (0, ln 3): p1 = 3/4, loss = ln(4/3)
        let loss = weighted_cross_entropy(&[[0.0, 3.0f64.ln()]], &[Label::HateSpeech], [1.0, 1.0])
            .unwrap();
        assert!((loss - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((loss - 0.287682).abs() < 5e-7);
    }

    #[test]
    fn hand_computed_weighted_batch_loss() {
        // per-sample nll = ln 2; weighted sum (0.5 + 2.0) ln 2, / 2.5 = ln 2
        let loss = weighted_cross_entropy(
            &[[0.0, 0.0], [0.0, 0.0]],
            &[Label::NoHateSpeech, Label::HateSpeech],
            [0.5, 2.0],
        )
        .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(matches!(
            weighted_cross_entropy(&[], &[], [1.0, 1.0]),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            weighted_cross_entropy(&[[f64::NAN, 0.0]], &[Label::HateSpeech], [1.0, 1.0]),
            Err(TrainError::NonFiniteLogits)
        ));
    }

    #[test]
    fn unit_weights_equal_unweighted_ce() {
        let logits = [[0.2, -1.3], [2.0, 1.0], [-0.5, 0.5]];
        let labels = [Label::HateSpeech, Label::NoHateSpeech, Label::HateSpeech];
        let weighted = weighted_cross_entropy(&logits, &labels, [1.0, 1.0]).unwrap();
        let mut plain = 0.0;
        for (l, y) in logits.iter().zip(&labels) {
            let p = softmax(&ndarray::Array1::from_vec(l.to_vec()));
            plain += -(p[y.code()].ln());
        }
        plain /= logits.len() as f64;
        assert!((weighted - plain).abs() < 1e-15);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let logits = [[0.3, -0.7], [1.5, 2.0]];
        let labels = [Label::HateSpeech, Label::NoHateSpeech];
        let weights = [0.9, 1.1];
        let (_, grads) = weighted_ce_with_grads(&logits, &labels, weights).unwrap();
        let h = 1e-7;
        for i in 0..logits.len() {
            for j in 0..2 {
                let mut plus = logits;
                plus[i][j] += h;
                let mut minus = logits;
                minus[i][j] -= h;
                let fd = (weighted_cross_entropy(&plus, &labels, weights).unwrap()
                    - weighted_cross_entropy(&minus, &labels, weights).unwrap())
                    / (2.0 * h);
                assert!(
                    (grads[i][j] - fd).abs() < 1e-8,
                    "grad[{i}][{j}]: {} vs {fd}",
                    grads[i][j]
                );
            }
        }
    }

    #[test]
    fn schedule_is_recorded_exactly() {
        // contract check lives in nn::step_lr tests; here just the formula
        for e in 0..100 {
            let lr = step_lr(3e-4, 0.1, 30, e);
            assert_eq!(lr, 3e-4 * 0.1f64.powi((e / 30) as i32));
        }
    }

    #[test]
    fn fingerprint_changes_with_config() {
        let model_cfg = crate::model::ModelConfig::default();
        let a = config_fingerprint(&TrainConfig::default(), &model_cfg);
        let b = config_fingerprint(
            &TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            &model_cfg,
        );
        assert_ne!(a, b);
        let a2 = config_fingerprint(&TrainConfig::default(), &model_cfg);
        assert_eq!(a, a2);
        // a longer horizon alone is still the same run
        let longer = config_fingerprint(
            &TrainConfig {
                epochs: 500,
                ..TrainConfig::default()
            },
            &model_cfg,
        );
        assert_eq!(a, longer);
    }
}
