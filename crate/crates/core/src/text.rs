//! Text branches: tokenization and the 512-d features F2 and F3.
//!
//! The two branches are parameter-disjoint instances of [`TextBackbone`]
//! with their own tokenizer conventions and pooling rules.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{relu, Linear};
use crate::FEATURE_DIM;

pub const POOLED_DIM: usize = 768;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
/// Word ids are hashed into [WORD_ID_BASE, VOCAB_SIZE).
pub const WORD_ID_BASE: u32 = 4;
pub const VOCAB_SIZE: u32 = 30_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingRule {
    FirstToken,
    LastToken,
    Mean,
}

/// Where the summary special token sits relative to the words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialTokenLayout {
    /// [CLS] w1 .. wk [SEP], bidirectional-encoder convention.
    ClsFirst,
    /// w1 .. wk [SEP] [CLS], permutation-LM convention.
    ClsLast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub backbone_id: String,
}

/// 512-d text feature; role distinguishes the two branch slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TextRole {
    F2,
    F3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature {
    pub vector: Array1<f64>,
    pub role: TextRole,
}

#[derive(Debug, Error)]
pub enum TextError {
    #[error("max_len {max_len} too small: the backbone needs {required} special tokens")]
    ConfigError { max_len: usize, required: usize },
    #[error("token sequence built for backbone `{expected}` fed to `{got}`")]
    BackboneMismatch { expected: String, got: String },
    #[error("shape mismatch: expected sequence length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("backbone weights missing at {0}")]
    MissingWeights(PathBuf),
    #[error("backbone weights at {path} failed to load: {reason}")]
    BadWeights { path: PathBuf, reason: String },
}

/// Frozen token-embedding source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum TextBody {
    /// Each token id maps to a deterministic seeded 768-d vector.
    Stub { seed: u64 },
    /// Embedding table loaded from a file; rows indexed by token id.
    Pretrained {
        source: PathBuf,
        table: Vec<Vec<f64>>,
    },
}

impl TextBody {
    fn embed(&self, token_id: u32, dim: usize) -> f64 {
        match self {
            TextBody::Stub { seed } => stub_embedding_value(*seed, token_id, dim),
            TextBody::Pretrained { table, .. } => table
                .get(token_id as usize)
                .and_then(|row| row.get(dim))
                .copied()
                .unwrap_or(0.0),
        }
    }
}

/// Deterministic hash of (seed, token, dim) to a uniform value in [-1, 1].
fn stub_embedding_value(seed: u64, token_id: u32, dim: usize) -> f64 {
    let mut x = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((token_id as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((dim as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    // splitmix64 finalizer
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    (x as f64 / u64::MAX as f64) * 2.0 - 1.0
}

fn hash_word(word: &str) -> u32 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in word.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    WORD_ID_BASE + (h % (VOCAB_SIZE - WORD_ID_BASE) as u64) as u32
}

/// One text branch: tokenizer convention, frozen embedding body, pooling
/// rule, and a trainable projection 768 -> 512 with a rectifier after it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TextBackbone {
    pub identity: String,
    pub layout: SpecialTokenLayout,
    pub pooling_rule: PoolingRule,
    pub body: TextBody,
    pub projection: Linear,
}

impl TextBackbone {
    pub fn stub(identity: &str, seed: u64, layout: SpecialTokenLayout) -> TextBackbone {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
        TextBackbone {
            identity: identity.to_string(),
            layout,
            // Stub pools with a mask-weighted mean.
            pooling_rule: PoolingRule::Mean,
            body: TextBody::Stub { seed },
            projection: Linear::seeded(FEATURE_DIM, POOLED_DIM, &mut rng),
        }
    }

    /// Load an embedding table from `<dir>/<name>_embeddings.bin`.
    pub fn pretrained(
        dir: &Path,
        name: &str,
        seed: u64,
        layout: SpecialTokenLayout,
        pooling_rule: PoolingRule,
    ) -> Result<TextBackbone, TextError> {
        let path = dir.join(format!("{name}_embeddings.bin"));
        if !path.is_file() {
            return Err(TextError::MissingWeights(path));
        }
        let bytes = std::fs::read(&path).map_err(|e| TextError::BadWeights {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let table: Vec<Vec<f64>> =
            bincode::deserialize(&bytes).map_err(|e| TextError::BadWeights {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(1));
        Ok(TextBackbone {
            identity: format!("pretrained-text:{}", path.display()),
            layout,
            pooling_rule,
            body: TextBody::Pretrained {
                source: path,
                table,
            },
            projection: Linear::seeded(FEATURE_DIM, POOLED_DIM, &mut rng),
        })
    }

    /// Pooled 768-d encoding of a token sequence per the pooling rule.
    /// Padding positions never contribute.
    pub fn pooled(&self, tokens: &TokenSequence) -> Result<Array1<f64>, TextError> {
        if tokens.backbone_id != self.identity {
            return Err(TextError::BackboneMismatch {
                expected: tokens.backbone_id.clone(),
                got: self.identity.clone(),
            });
        }
        let real: Vec<u32> = tokens
            .token_ids
            .iter()
            .zip(&tokens.attention_mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&t, _)| t)
            .collect();
        let mut out = Array1::zeros(POOLED_DIM);
        match self.pooling_rule {
            PoolingRule::FirstToken => {
                if let Some(&t) = real.first() {
                    for d in 0..POOLED_DIM {
                        out[d] = self.body.embed(t, d);
                    }
                }
            }
            PoolingRule::LastToken => {
                if let Some(&t) = real.last() {
                    for d in 0..POOLED_DIM {
                        out[d] = self.body.embed(t, d);
                    }
                }
            }
            PoolingRule::Mean => {
                if !real.is_empty() {
                    for &t in &real {
                        for d in 0..POOLED_DIM {
                            out[d] += self.body.embed(t, d);
                        }
                    }
                    out /= real.len() as f64;
                }
            }
        }
        Ok(out)
    }

    /// Projection + ReLU over a pooled encoding: (pre-activation, feature).
    pub fn project(&self, pooled: &Array1<f64>, role: TextRole) -> (Array1<f64>, TextFeature) {
        let pre = self.projection.forward(pooled);
        let vector = relu(&pre);
        (pre, TextFeature { vector, role })
    }
}

/// Whitespace tokenization with hashed word ids, truncated and padded to
/// exactly `max_len`, special tokens per the backbone's layout.
pub fn tokenize(
    text: &str,
    backbone: &TextBackbone,
    max_len: usize,
) -> Result<TokenSequence, TextError> {
    let n_special = 2; // CLS + SEP in both layouts
    if max_len < n_special {
        return Err(TextError::ConfigError {
            max_len,
            required: n_special,
        });
    }
    let budget = max_len - n_special;
    let words: Vec<u32> = text
        .split_whitespace()
        .take(budget)
        .map(hash_word)
        .collect();

    let mut ids = Vec::with_capacity(max_len);
    match backbone.layout {
        SpecialTokenLayout::ClsFirst => {
            ids.push(CLS_ID);
            ids.extend(&words);
            ids.push(SEP_ID);
        }
        SpecialTokenLayout::ClsLast => {
            ids.extend(&words);
            ids.push(SEP_ID);
            ids.push(CLS_ID);
        }
    }
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut mask = vec![1u8; real];
    mask.resize(max_len, 0);
    Ok(TokenSequence {
        token_ids: ids,
        attention_mask: mask,
        backbone_id: backbone.identity.clone(),
    })
}

/// Full branch forward: pooled encoding, then projection to 512.
pub fn encode_text(
    tokens: &TokenSequence,
    backbone: &TextBackbone,
    role: TextRole,
) -> Result<TextFeature, TextError> {
    let pooled = backbone.pooled(tokens)?;
    Ok(backbone.project(&pooled, role).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backbone_a() -> TextBackbone {
        TextBackbone::stub("stub-text-a", 11, SpecialTokenLayout::ClsFirst)
    }

    fn backbone_b() -> TextBackbone {
        TextBackbone::stub("stub-text-b", 23, SpecialTokenLayout::ClsLast)
    }

    #[test]
    fn empty_string_is_specials_plus_padding() {
        let bb = backbone_a();
        let seq = tokenize("", &bb, 512).unwrap();
        assert_eq!(seq.token_ids.len(), 512);
        assert_eq!(seq.attention_mask.len(), 512);
        assert_eq!(seq.token_ids[0], CLS_ID);
        assert_eq!(seq.token_ids[1], SEP_ID);
        let mask_sum: u32 = seq.attention_mask.iter().map(|&m| m as u32).sum();
        assert_eq!(mask_sum, 2);
    }

    #[test]
    fn long_text_truncates_to_max_len() {
        let bb = backbone_a();
        let text = "word ".repeat(2000);
        assert!(text.len() >= 10_000);
        let seq = tokenize(&text, &bb, 512).unwrap();
        assert_eq!(seq.token_ids.len(), 512);
        assert_eq!(*seq.token_ids.last().unwrap(), SEP_ID);
        assert!(seq.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn tokenize_is_deterministic() {
        let bb = backbone_b();
        let a = tokenize("some sample text", &bb, 32).unwrap();
        let b = tokenize("some sample text", &bb, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cls_last_layout_ends_with_cls() {
        let bb = backbone_b();
        let seq = tokenize("hello world", &bb, 16).unwrap();
        assert_eq!(seq.token_ids[2], SEP_ID);
        assert_eq!(seq.token_ids[3], CLS_ID);
        assert_eq!(seq.token_ids[4], PAD_ID);
    }

    #[test]
    fn max_len_below_specials_is_config_error() {
        let bb = backbone_a();
        assert!(matches!(
            tokenize("x", &bb, 1),
            Err(TextError::ConfigError { .. })
        ));
    }

    #[test]
    fn encode_yields_512_finite_vector() {
        let bb = backbone_a();
        let seq = tokenize("a text embedded image", &bb, 64).unwrap();
        let f = encode_text(&seq, &bb, TextRole::F2).unwrap();
        assert_eq!(f.vector.len(), FEATURE_DIM);
        assert!(f.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn padding_amount_does_not_change_feature() {
        let bb = backbone_a();
        let short = tokenize("same words here", &bb, 16).unwrap();
        let long = tokenize("same words here", &bb, 256).unwrap();
        let a = encode_text(&short, &bb, TextRole::F2).unwrap();
        let b = encode_text(&long, &bb, TextRole::F2).unwrap();
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn backbone_mismatch_is_rejected() {
        let a = backbone_a();
        let b = backbone_b();
        let seq = tokenize("hello", &a, 16).unwrap();
        assert!(matches!(
            encode_text(&seq, &b, TextRole::F3),
            Err(TextError::BackboneMismatch { .. })
        ));
    }

    #[test]
    fn branches_are_parameter_disjoint() {
        let a = backbone_a();
        let mut b = backbone_b();
        let seq_a = tokenize("shared input", &a, 16).unwrap();
        let before = encode_text(&seq_a, &a, TextRole::F2).unwrap();
        // mutate branch B's projection; branch A must not move
        b.projection.weight.fill(123.0);
        let after = encode_text(&seq_a, &a, TextRole::F2).unwrap();
        assert_eq!(before.vector, after.vector);
    }

    #[test]
    fn stub_hello_matches_frozen_fixture() {
        let bb = backbone_a();
        let seq = tokenize("hello", &bb, 16).unwrap();
        let f = encode_text(&seq, &bb, TextRole::F2).unwrap();
        // Frozen by tests/freeze_fixtures.rs (run with --ignored to regenerate).
        let expected_head = [0.0, 0.28830825875693283, 0.0, 0.20053369063477283];
        for (i, &e) in expected_head.iter().enumerate() {
            assert!(
                (f.vector[i] - e).abs() < 1e-12,
                "component {i}: {} vs {e}",
                f.vector[i]
            );
        }
        let checksum: f64 = f.vector.sum();
        assert!(
            (checksum - 45.220773824448344).abs() < 1e-9,
            "checksum {checksum}"
        );
    }
}
