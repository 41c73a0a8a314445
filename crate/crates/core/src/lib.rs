//! Multimodal hate-speech classification for text-embedded images.
//!
//! A frozen vision trunk and two frozen text trunks each feed a trainable
//! 512-d projection; the three features are concatenated into a 1536-d
//! fused vector and classified by a small two-layer head. OCR text comes
//! from an external engine with a persistent extraction cache.
//!
//! Modules mirror the pipeline: [`corpus`] (manifests, labels, splits),
//! [`ocr`] (engine subprocess + cache), [`vision`] / [`text`] (branch
//! encoders), [`fusion`] (concatenation and head), [`model`] (the assembled
//! ensemble with manual backprop), [`trainer`] (weighted cross-entropy,
//! Adam, step schedule, checkpoints), [`evaluator`] (metrics, ablations,
//! plots, reports), [`synth`] (synthetic fixtures), and [`config`] (run
//! configuration).

pub mod config;
pub mod corpus;
pub mod evaluator;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod ocr;
pub mod synth;
pub mod text;
pub mod trainer;
pub mod vision;

/// Per-branch feature width after projection.
pub const FEATURE_DIM: usize = 512;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
