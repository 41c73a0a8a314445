//! Metrics, the ablation harness, training-curve plots, and the
//! per-instance empirical report.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DatasetManifest, Label};
use crate::model::{BranchKind, EnsembleModel, ModelConfig, ModelError, Predictor};
use crate::trainer::{self, TrainConfig, TrainError, TrainHistory};

/// Counts with HateSpeech as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// Indexed by label code (0 = NoHateSpeech, 1 = HateSpeech).
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub f1: [f64; 2],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),
    #[error("duplicate ablation variant `{0}`")]
    DuplicateVariant(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("output directory {0} is not writable")]
    UnwritableDirectory(PathBuf),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("sample `{0}` has no label")]
    UnlabeledSample(String),
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = ConfusionMatrix {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
    };
    for (p, y) in preds.iter().zip(labels) {
        match (p, y) {
            (Label::HateSpeech, Label::HateSpeech) => cm.true_pos += 1,
            (Label::HateSpeech, Label::NoHateSpeech) => cm.false_pos += 1,
            (Label::NoHateSpeech, Label::NoHateSpeech) => cm.true_neg += 1,
            (Label::NoHateSpeech, Label::HateSpeech) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// Standard accuracy / per-class precision, recall, F1 / macro averages.
/// A class absent from both predictions and labels contributes zeros and a
/// warning instead of NaN.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let total = cm.total() as f64;
    let accuracy = (cm.true_pos + cm.true_neg) as f64 / total;

    // per class as (tp, fp, fn), positive-class view for each label
    let per_class = [
        // NoHateSpeech treated as positive
        (cm.true_neg, cm.false_neg, cm.false_pos),
        // HateSpeech treated as positive
        (cm.true_pos, cm.false_pos, cm.false_neg),
    ];
    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    let mut f1 = [0.0; 2];
    let mut warnings = Vec::new();
    for (code, (tp, fp, fnc)) in per_class.iter().enumerate() {
        if tp + fp + fnc == 0 {
            warnings.push(format!(
                "class {} absent from predictions and labels; its metrics default to 0",
                Label::from_code(code).unwrap()
            ));
            continue;
        }
        precision[code] = if tp + fp > 0 {
            *tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        recall[code] = if tp + fnc > 0 {
            *tp as f64 / (tp + fnc) as f64
        } else {
            0.0
        };
        f1[code] = if precision[code] + recall[code] > 0.0 {
            2.0 * precision[code] * recall[code] / (precision[code] + recall[code])
        } else {
            0.0
        };
    }
    Ok(MetricReport {
        accuracy,
        precision,
        recall,
        f1,
        macro_precision: (precision[0] + precision[1]) / 2.0,
        macro_recall: (recall[0] + recall[1]) / 2.0,
        macro_f1: (f1[0] + f1[1]) / 2.0,
        warnings,
    })
}

/// Evaluate a predictor over a labeled manifest.
pub fn evaluate_manifest<P: Predictor>(
    predictor: &P,
    manifest: &DatasetManifest,
) -> Result<MetricReport, EvalError> {
    let mut preds = Vec::with_capacity(manifest.samples.len());
    let mut labels = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let label = s
            .label
            .ok_or_else(|| EvalError::UnlabeledSample(s.index.clone()))?;
        preds.push(predictor.predict_sample(s)?.label);
        labels.push(label);
    }
    metrics(&confusion(&preds, &labels)?)
}

// ---------------------------------------------------------------------------
// Ablation harness

/// The standard five-variant matrix mirroring the per-model comparison
/// table: each branch alone, the text pair, and the full ensemble.
pub const STANDARD_VARIANTS: [&str; 5] = ["text_a", "text_b", "vision", "text_pair", "ensemble"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub variants: Vec<String>,
}

impl AblationSpec {
    pub fn standard() -> AblationSpec {
        AblationSpec {
            variants: STANDARD_VARIANTS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn variant_branches(name: &str) -> Result<Vec<BranchKind>, EvalError> {
    match name {
        "vision" => Ok(vec![BranchKind::Vision]),
        "text_a" => Ok(vec![BranchKind::TextA]),
        "text_b" => Ok(vec![BranchKind::TextB]),
        "text_pair" => Ok(vec![BranchKind::TextA, BranchKind::TextB]),
        "ensemble" => Ok(BranchKind::ALL.to_vec()),
        other => Err(EvalError::UnknownVariant(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,accuracy,precision,recall,f1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4}\n",
                r.variant, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Model | Accuracy | Precision | Recall | F1 |\n");
        out.push_str("|---|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                r.variant, r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1
            ));
        }
        out
    }

    pub fn get(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Train and evaluate every variant on identical splits and seeds.
/// Variants run sequentially; each gets a fresh model built from the base
/// model config with its branch subset.
pub fn run_ablation(
    spec: &AblationSpec,
    train: &DatasetManifest,
    validation: &DatasetManifest,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
) -> Result<AblationTable, EvalError> {
    let mut seen = HashSet::new();
    for v in &spec.variants {
        variant_branches(v)?;
        if !seen.insert(v.clone()) {
            return Err(EvalError::DuplicateVariant(v.clone()));
        }
    }
    let mut table = AblationTable::default();
    for v in &spec.variants {
        let mut cfg = base_model.clone();
        cfg.branches = variant_branches(v)?;
        let mut model = EnsembleModel::new(cfg)?;
        trainer::fit(base_train, train, validation, &mut model)?;
        let report = evaluate_manifest(&model, validation)?;
        table.rows.push(AblationRow {
            variant: v.clone(),
            accuracy: report.accuracy,
            macro_precision: report.macro_precision,
            macro_recall: report.macro_recall,
            macro_f1: report.macro_f1,
        });
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Training-curve plots

/// Write `accuracy_vs_epoch.svg` and `loss_vs_epoch.svg` (train and
/// validation series on each) plus sidecar `.csv` data files.
pub fn plot_history(history: &TrainHistory, out_dir: &Path) -> Result<[PathBuf; 2], EvalError> {
    if history.records.is_empty() {
        return Err(EvalError::EmptyHistory);
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|_| EvalError::UnwritableDirectory(out_dir.to_path_buf()))?;

    let epochs: Vec<f64> = history.records.iter().map(|r| r.epoch as f64).collect();
    let plots = [
        (
            "accuracy_vs_epoch",
            "Accuracy",
            history
                .records
                .iter()
                .map(|r| r.train_acc)
                .collect::<Vec<_>>(),
            history
                .records
                .iter()
                .map(|r| r.val_acc)
                .collect::<Vec<_>>(),
        ),
        (
            "loss_vs_epoch",
            "Loss",
            history
                .records
                .iter()
                .map(|r| r.train_loss)
                .collect::<Vec<_>>(),
            history
                .records
                .iter()
                .map(|r| r.val_loss)
                .collect::<Vec<_>>(),
        ),
    ];

    let mut written = [PathBuf::new(), PathBuf::new()];
    for (i, (name, ylabel, train_series, val_series)) in plots.iter().enumerate() {
        let svg = render_svg(
            ylabel,
            &epochs,
            &[("train", train_series), ("validation", val_series)],
        );
        let svg_path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&svg_path, svg)
            .map_err(|_| EvalError::UnwritableDirectory(out_dir.to_path_buf()))?;

        let mut csv = format!("epoch,train_{0},val_{0}\n", ylabel.to_lowercase());
        for (j, r) in history.records.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{}\n",
                r.epoch, train_series[j], val_series[j]
            ));
        }
        std::fs::write(out_dir.join(format!("{name}.csv")), csv)
            .map_err(|_| EvalError::UnwritableDirectory(out_dir.to_path_buf()))?;
        written[i] = svg_path;
    }
    Ok(written)
}

fn render_svg(ylabel: &str, xs: &[f64], series: &[(&str, &Vec<f64>)]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 500.0;
    const ML: f64 = 70.0;
    const MR: f64 = 30.0;
    const MT: f64 = 40.0;
    const MB: f64 = 60.0;
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

    let x_min = xs.first().copied().unwrap_or(0.0);
    let x_max = xs.last().copied().unwrap_or(1.0).max(x_min + 1e-9);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, ys) in series {
        for &y in ys.iter() {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if y_max <= y_min {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = (y_max - y_min) * 0.05;
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    let sx = |x: f64| ML + (x - x_min) / (x_max - x_min) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"18\" text-anchor=\"middle\">{ylabel} vs epoch</text>\n",
        W / 2.0
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{0}\" x2=\"{}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">epoch</text>\n\
         <text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 20.0,
        H / 2.0,
        H / 2.0,
        ylabel
    ));
    // min/max tick labels
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x_min}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{x_max}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{y_min:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{y_max:.4}</text>\n",
        sx(x_min),
        H - MB + 18.0,
        sx(x_max),
        H - MB + 18.0,
        ML - 6.0,
        sy(y_min) + 4.0,
        ML - 6.0,
        sy(y_max) + 4.0,
    ));

    for (i, (name, ys)) in series.iter().enumerate() {
        let color = colors[i % colors.len()];
        if xs.len() == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(xs[0]),
                sy(ys[0])
            ));
        } else {
            let points: Vec<String> = xs
                .iter()
                .zip(ys.iter())
                .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                points.join(" ")
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            W - MR - 110.0,
            MT + 16.0 * (i as f64 + 1.0)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Empirical per-instance report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub index: String,
    pub actual: Label,
    pub predicted: Label,
    pub confidence: f64,
    pub ocr_excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmpiricalSummary {
    pub correct: usize,
    pub incorrect: usize,
    /// actual HateSpeech, predicted HateSpeech
    pub hate_recognized: usize,
    /// actual HateSpeech, predicted NoHateSpeech (missed, e.g. sarcasm)
    pub hate_missed: usize,
    /// actual NoHateSpeech, predicted NoHateSpeech
    pub benign_recognized: usize,
    /// actual NoHateSpeech, predicted HateSpeech (trigger-word false alarms)
    pub benign_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub rows: Vec<EmpiricalRow>,
    pub summary: EmpiricalSummary,
}

impl EmpiricalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,actual,predicted,confidence,ocr_excerpt\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{}\n",
                r.index,
                r.actual.file_name(),
                r.predicted.file_name(),
                r.confidence,
                r.ocr_excerpt.replace(',', " ")
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Index | Actual Label | Predicted Label | Confidence |\n");
        out.push_str("|---|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} |\n",
                r.index, r.actual, r.predicted, r.confidence
            ));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "\ncorrect: {} / incorrect: {}\n\n\
             - hate speech recognized: {}\n\
             - hate speech missed: {}\n\
             - benign recognized: {}\n\
             - benign flagged as hate: {}\n",
            s.correct,
            s.incorrect,
            s.hate_recognized,
            s.hate_missed,
            s.benign_recognized,
            s.benign_flagged
        ));
        out
    }
}

/// One row per labeled sample with actual/predicted labels and confidence,
/// plus agreement counts split by actual label.
pub fn empirical_report<P: Predictor>(
    predictor: &P,
    samples: &DatasetManifest,
) -> Result<EmpiricalReport, EvalError> {
    let mut rows = Vec::with_capacity(samples.samples.len());
    let mut summary = EmpiricalSummary::default();
    for s in &samples.samples {
        let actual = s
            .label
            .ok_or_else(|| EvalError::UnlabeledSample(s.index.clone()))?;
        let pred = predictor.predict_sample(s)?;
        let excerpt: String = s
            .ocr_text
            .as_deref()
            .unwrap_or("")
            .chars()
            .take(120)
            .collect();
        match (actual, pred.label) {
            (Label::HateSpeech, Label::HateSpeech) => summary.hate_recognized += 1,
            (Label::HateSpeech, Label::NoHateSpeech) => summary.hate_missed += 1,
            (Label::NoHateSpeech, Label::NoHateSpeech) => summary.benign_recognized += 1,
            (Label::NoHateSpeech, Label::HateSpeech) => summary.benign_flagged += 1,
        }
        if actual == pred.label {
            summary.correct += 1;
        } else {
            summary.incorrect += 1;
        }
        rows.push(EmpiricalRow {
            index: s.index.clone(),
            actual,
            predicted: pred.label,
            confidence: pred.confidence,
            ocr_excerpt: excerpt,
        });
    }
    Ok(EmpiricalReport { rows, summary })
}
