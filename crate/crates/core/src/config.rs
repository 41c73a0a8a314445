//! Declarative run configuration.
//!
//! Grammar (one setting per line):
//!   - blank lines and lines starting with `#` are ignored
//!   - everything else must be `key.path = value`
//!   - unknown keys are errors, so typos never pass silently
//!
//! See `config.example.conf` at the repository root for every key and its
//! default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::model::{BackboneSource, BranchKind, ModelConfig};
use crate::ocr::OcrEngine;
use crate::trainer::TrainConfig;
use crate::vision::PreprocessConfig;

pub const CACHE_ROOT_ENV: &str = "HATEFUSE_CACHE_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub enum ClassWeightSetting {
    /// Inverse-frequency weights computed from the training manifest.
    Auto,
    Fixed([f64; 2]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub cache_store: PathBuf,
    pub output_dir: PathBuf,
    pub weights_dir_vision: Option<PathBuf>,
    pub weights_dir_text_a: Option<PathBuf>,
    pub weights_dir_text_b: Option<PathBuf>,

    pub backbone_vision: String,
    pub backbone_text_a: String,
    pub backbone_text_b: String,

    pub vision_native_dim: usize,
    pub zero_fill_missing: bool,
    pub preprocess: PreprocessConfig,

    pub train: TrainConfig,
    pub class_weights: ClassWeightSetting,

    pub ocr: OcrEngine,
    pub ocr_workers: usize,

    pub ablation_variants: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_manifest: None,
            validation_manifest: None,
            test_manifest: None,
            image_root: None,
            cache_store: PathBuf::from("cache/ocr.jsonl"),
            output_dir: PathBuf::from("runs"),
            weights_dir_vision: None,
            weights_dir_text_a: None,
            weights_dir_text_b: None,
            backbone_vision: "stub".into(),
            backbone_text_a: "stub".into(),
            backbone_text_b: "stub".into(),
            vision_native_dim: 2048,
            zero_fill_missing: false,
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            class_weights: ClassWeightSetting::Auto,
            ocr: OcrEngine::default(),
            ocr_workers: 4,
            ablation_variants: crate::evaluator::STANDARD_VARIANTS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{content}`")]
    BadLine { line: usize, content: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("`{0}` must be set for this command")]
    MissingSetting(String),
    #[error("backbone `{branch}` is `pretrained` but `{key}` is not set")]
    MissingWeightsDir { branch: String, key: String },
    #[error("weights directory does not exist: {0}")]
    MissingWeightsPath(PathBuf),
    #[error("invalid value: {0}")]
    Invalid(String),
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: format!("`{value}` is not a number"),
    })
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        reason: format!("`{value}` is not a non-negative integer"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{value}` is not `true` or `false`"),
        }),
    }
}

fn parse_triple(key: &str, value: &str, line: usize) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: "expected three comma-separated numbers".into(),
        });
    }
    Ok([
        parse_f64(key, parts[0], line)?,
        parse_f64(key, parts[1], line)?,
        parse_f64(key, parts[2], line)?,
    ])
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        if !path.is_file() {
            return Err(ConfigError::MissingFile(path.to_path_buf()));
        }
        let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = RunConfig::parse(&content)?;
        config.apply_env();
        Ok(config)
    }

    pub fn parse(content: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in content.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: line_no,
                content: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value, line_no)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "paths.train_manifest" => self.train_manifest = Some(PathBuf::from(value)),
            "paths.validation_manifest" => self.validation_manifest = Some(PathBuf::from(value)),
            "paths.test_manifest" => self.test_manifest = Some(PathBuf::from(value)),
            "paths.image_root" => self.image_root = Some(PathBuf::from(value)),
            "paths.cache_store" => self.cache_store = PathBuf::from(value),
            "paths.output_dir" => self.output_dir = PathBuf::from(value),
            "paths.weights_dir_vision" => self.weights_dir_vision = Some(PathBuf::from(value)),
            "paths.weights_dir_text_a" => self.weights_dir_text_a = Some(PathBuf::from(value)),
            "paths.weights_dir_text_b" => self.weights_dir_text_b = Some(PathBuf::from(value)),
            "backbone.vision" => self.backbone_vision = parse_backbone(key, value, line)?,
            "backbone.text_a" => self.backbone_text_a = parse_backbone(key, value, line)?,
            "backbone.text_b" => self.backbone_text_b = parse_backbone(key, value, line)?,
            "model.vision_native_dim" => self.vision_native_dim = parse_usize(key, value, line)?,
            "model.zero_fill_missing" => self.zero_fill_missing = parse_bool(key, value, line)?,
            "preprocess.height" => self.preprocess.height = parse_usize(key, value, line)?,
            "preprocess.width" => self.preprocess.width = parse_usize(key, value, line)?,
            "preprocess.mean" => self.preprocess.mean = parse_triple(key, value, line)?,
            "preprocess.std" => self.preprocess.std = parse_triple(key, value, line)?,
            "train.learning_rate" => self.train.learning_rate = parse_f64(key, value, line)?,
            "train.weight_decay" => self.train.weight_decay = parse_f64(key, value, line)?,
            "train.max_seq_len" => self.train.max_seq_len = parse_usize(key, value, line)?,
            "train.epochs" => self.train.epochs = parse_usize(key, value, line)?,
            "train.batch_size" => self.train.batch_size = parse_usize(key, value, line)?,
            "train.lr_step_size" => self.train.lr_step_size = parse_usize(key, value, line)?,
            "train.lr_decay" => self.train.lr_decay = parse_f64(key, value, line)?,
            "train.seed" => {
                self.train.seed = value.parse().map_err(|_| ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    reason: format!("`{value}` is not an integer seed"),
                })?
            }
            "train.freeze_branches" => self.train.freeze_branches = parse_bool(key, value, line)?,
            "train.class_weights" => {
                self.class_weights = if value == "auto" {
                    ClassWeightSetting::Auto
                } else {
                    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            reason: "expected `auto` or two comma-separated weights".into(),
                        });
                    }
                    ClassWeightSetting::Fixed([
                        parse_f64(key, parts[0], line)?,
                        parse_f64(key, parts[1], line)?,
                    ])
                }
            }
            "ocr.program" => self.ocr.program = value.to_string(),
            "ocr.args" => self.ocr.args = value.split_whitespace().map(str::to_string).collect(),
            "ocr.engine_id" => self.ocr.engine_id = value.to_string(),
            "ocr.timeout_secs" => {
                self.ocr.timeout = Duration::from_secs(parse_usize(key, value, line)? as u64)
            }
            "ocr.workers" => self.ocr_workers = parse_usize(key, value, line)?.max(1),
            "ablation.variants" => {
                self.ablation_variants = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Cache-root override from the environment.
    fn apply_env(&mut self) {
        if let Ok(root) = std::env::var(CACHE_ROOT_ENV) {
            if !root.is_empty() {
                let file = self
                    .cache_store
                    .file_name()
                    .map(|f| f.to_os_string())
                    .unwrap_or_else(|| "ocr.jsonl".into());
                self.cache_store = PathBuf::from(root).join(file);
            }
        }
    }

    /// Structural validation shared by every command; runs before any side
    /// effect.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.preprocess.height == 0 || self.preprocess.width == 0 {
            return Err(ConfigError::Invalid(
                "preprocess size must be positive".into(),
            ));
        }
        if self.vision_native_dim == 0 {
            return Err(ConfigError::Invalid(
                "vision_native_dim must be positive".into(),
            ));
        }
        if self.ablation_variants.is_empty() {
            return Err(ConfigError::Invalid("ablation.variants is empty".into()));
        }
        for v in &self.ablation_variants {
            crate::evaluator::variant_branches(v)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        // pretrained backbones need their weights directory up front
        for (branch, kind, dir, key) in [
            (
                "vision",
                &self.backbone_vision,
                &self.weights_dir_vision,
                "paths.weights_dir_vision",
            ),
            (
                "text_a",
                &self.backbone_text_a,
                &self.weights_dir_text_a,
                "paths.weights_dir_text_a",
            ),
            (
                "text_b",
                &self.backbone_text_b,
                &self.weights_dir_text_b,
                "paths.weights_dir_text_b",
            ),
        ] {
            if kind == "pretrained" {
                let dir = dir.as_ref().ok_or_else(|| ConfigError::MissingWeightsDir {
                    branch: branch.to_string(),
                    key: key.to_string(),
                })?;
                if !dir.is_dir() {
                    return Err(ConfigError::MissingWeightsPath(dir.clone()));
                }
            }
        }
        Ok(())
    }

    fn source_for(&self, branch: BranchKind) -> BackboneSource {
        let (kind, dir) = match branch {
            BranchKind::Vision => (&self.backbone_vision, &self.weights_dir_vision),
            BranchKind::TextA => (&self.backbone_text_a, &self.weights_dir_text_a),
            BranchKind::TextB => (&self.backbone_text_b, &self.weights_dir_text_b),
        };
        if kind == "pretrained" {
            BackboneSource::Pretrained(dir.clone().expect("validated"))
        } else {
            BackboneSource::Stub
        }
    }

    /// Model config for a branch subset (the full ensemble or an ablation
    /// variant).
    pub fn model_config(&self, branches: Vec<BranchKind>) -> ModelConfig {
        ModelConfig {
            branches,
            seed: self.train.seed,
            preprocess: self.preprocess,
            max_seq_len: self.train.max_seq_len,
            vision_native_dim: self.vision_native_dim,
            vision_source: self.source_for(BranchKind::Vision),
            text_a_source: self.source_for(BranchKind::TextA),
            text_b_source: self.source_for(BranchKind::TextB),
            zero_fill_missing: self.zero_fill_missing,
        }
    }

    /// Serialize back to the config grammar (the resolved copy written into
    /// each run directory).
    pub fn to_conf(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        if let Some(p) = &self.train_manifest {
            push("paths.train_manifest", p.display().to_string());
        }
        if let Some(p) = &self.validation_manifest {
            push("paths.validation_manifest", p.display().to_string());
        }
        if let Some(p) = &self.test_manifest {
            push("paths.test_manifest", p.display().to_string());
        }
        if let Some(p) = &self.image_root {
            push("paths.image_root", p.display().to_string());
        }
        push("paths.cache_store", self.cache_store.display().to_string());
        push("paths.output_dir", self.output_dir.display().to_string());
        if let Some(p) = &self.weights_dir_vision {
            push("paths.weights_dir_vision", p.display().to_string());
        }
        if let Some(p) = &self.weights_dir_text_a {
            push("paths.weights_dir_text_a", p.display().to_string());
        }
        if let Some(p) = &self.weights_dir_text_b {
            push("paths.weights_dir_text_b", p.display().to_string());
        }
        push("backbone.vision", self.backbone_vision.clone());
        push("backbone.text_a", self.backbone_text_a.clone());
        push("backbone.text_b", self.backbone_text_b.clone());
        push(
            "model.vision_native_dim",
            self.vision_native_dim.to_string(),
        );
        push(
            "model.zero_fill_missing",
            self.zero_fill_missing.to_string(),
        );
        push("preprocess.height", self.preprocess.height.to_string());
        push("preprocess.width", self.preprocess.width.to_string());
        push(
            "preprocess.mean",
            format!(
                "{},{},{}",
                self.preprocess.mean[0], self.preprocess.mean[1], self.preprocess.mean[2]
            ),
        );
        push(
            "preprocess.std",
            format!(
                "{},{},{}",
                self.preprocess.std[0], self.preprocess.std[1], self.preprocess.std[2]
            ),
        );
        push("train.learning_rate", self.train.learning_rate.to_string());
        push("train.weight_decay", self.train.weight_decay.to_string());
        push("train.max_seq_len", self.train.max_seq_len.to_string());
        push("train.epochs", self.train.epochs.to_string());
        push("train.batch_size", self.train.batch_size.to_string());
        push("train.lr_step_size", self.train.lr_step_size.to_string());
        push("train.lr_decay", self.train.lr_decay.to_string());
        push("train.seed", self.train.seed.to_string());
        push(
            "train.freeze_branches",
            self.train.freeze_branches.to_string(),
        );
        push(
            "train.class_weights",
            match &self.class_weights {
                ClassWeightSetting::Auto => "auto".to_string(),
                ClassWeightSetting::Fixed([a, b]) => format!("{a},{b}"),
            },
        );
        push("ocr.program", self.ocr.program.clone());
        push("ocr.args", self.ocr.args.join(" "));
        push("ocr.engine_id", self.ocr.engine_id.clone());
        push("ocr.timeout_secs", self.ocr.timeout.as_secs().to_string());
        push("ocr.workers", self.ocr_workers.to_string());
        push("ablation.variants", self.ablation_variants.join(","));
        out
    }
}

fn parse_backbone(key: &str, value: &str, line: usize) -> Result<String, ConfigError> {
    match value {
        "stub" | "pretrained" => Ok(value.to_string()),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            reason: format!("`{value}` is not `stub` or `pretrained`"),
        }),
    }
}
