//! Dataset manifests: loading, validation, class statistics, and splits.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary label. Integer codes are fixed for the life of a run; files always
/// carry the name, never the bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NoHateSpeech,
    HateSpeech,
}

pub const NUM_CLASSES: usize = 2;

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::NoHateSpeech, Label::HateSpeech];

    pub fn code(self) -> usize {
        match self {
            Label::NoHateSpeech => 0,
            Label::HateSpeech => 1,
        }
    }

    pub fn from_code(code: usize) -> Option<Label> {
        match code {
            0 => Some(Label::NoHateSpeech),
            1 => Some(Label::HateSpeech),
            _ => None,
        }
    }

    /// Manifest spelling of the label.
    pub fn file_name(self) -> &'static str {
        match self {
            Label::NoHateSpeech => "no_hate",
            Label::HateSpeech => "hate",
        }
    }

    /// Parse the manifest spelling, case-insensitive.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hate" => Some(Label::HateSpeech),
            "no_hate" => Some(Label::NoHateSpeech),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::NoHateSpeech => "No Hate Speech",
            Label::HateSpeech => "Hate Speech",
        };
        f.write_str(s)
    }
}

/// One text-embedded image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: String,
    pub image_path: PathBuf,
    pub label: Option<Label>,
    pub ocr_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
    Custom,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
            SplitTag::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Ordered, validated collection of samples. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<Sample>,
    pub split_tag: SplitTag,
    /// True when the source file carried a label column.
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Indexed by label code.
    pub counts: [usize; NUM_CLASSES],
    /// w_c = N / (K * n_c), indexed by label code.
    pub weights: [f64; NUM_CLASSES],
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest header must be `index,image_path[,label]`, got `{0}`")]
    BadHeader(String),
    #[error("duplicate index `{0}`")]
    DuplicateIndex(String),
    #[error("image for index `{index}` is unreadable: {path}")]
    UnreadableImage { index: String, path: PathBuf },
    #[error("malformed row at line {line}: `{content}`")]
    MalformedRow { line: usize, content: String },
    #[error("unknown label `{label}` at line {line}")]
    UnknownLabel { label: String, line: usize },
    #[error("sample `{0}` has no label")]
    UnlabeledSample(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("class `{0}` has no samples; class weights are undefined")]
    EmptyClass(Label),
    #[error("split fractions must be positive and sum to 1, got ({0}, {1}, {2})")]
    BadFractions(f64, f64, f64),
}

/// Load and validate a manifest file.
///
/// Format: UTF-8, header `index,image_path,label` (label column optional for
/// unlabeled inference sets), one comma-delimited row per sample. Relative
/// image paths resolve against the manifest's parent directory.
pub fn load_manifest(path: &Path, split_tag: SplitTag) -> Result<DatasetManifest, CorpusError> {
    let root = path.parent().map(Path::to_path_buf);
    load_manifest_with_root(path, split_tag, root.as_deref())
}

/// Same as [`load_manifest`] but resolving relative image paths against an
/// explicit root directory.
pub fn load_manifest_with_root(
    path: &Path,
    split_tag: SplitTag,
    image_root: Option<&Path>,
) -> Result<DatasetManifest, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&content, split_tag, image_root, true)
}

/// Parse manifest text. `check_images` verifies each image file is present
/// and openable; parsing-only callers (round-trip tests) may skip it.
pub fn parse_manifest(
    content: &str,
    split_tag: SplitTag,
    image_root: Option<&Path>,
    check_images: bool,
) -> Result<DatasetManifest, CorpusError> {
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(CorpusError::BadHeader(String::new()))?;
    let labeled = match header.trim_end() {
        "index,image_path,label" => true,
        "index,image_path" => false,
        other => return Err(CorpusError::BadHeader(other.to_string())),
    };

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if labeled { 3 } else { 2 };
        if fields.len() != expected {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                content: line.to_string(),
            });
        }
        let index = fields[0].trim().to_string();
        if index.is_empty() {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                content: line.to_string(),
            });
        }
        if !seen.insert(index.clone()) {
            return Err(CorpusError::DuplicateIndex(index));
        }
        let raw_path = Path::new(fields[1].trim());
        let image_path = match image_root {
            Some(root) if raw_path.is_relative() => root.join(raw_path),
            _ => raw_path.to_path_buf(),
        };
        let label = if labeled {
            let raw = fields[2].trim();
            Some(Label::parse(raw).ok_or_else(|| CorpusError::UnknownLabel {
                label: raw.to_string(),
                line: line_no,
            })?)
        } else {
            None
        };
        if check_images && image::open(&image_path).is_err() {
            return Err(CorpusError::UnreadableImage {
                index,
                path: image_path,
            });
        }
        samples.push(Sample {
            index,
            image_path,
            label,
            ocr_text: None,
        });
    }
    Ok(DatasetManifest {
        samples,
        split_tag,
        labeled,
    })
}

/// Serialize a manifest back to its file format.
pub fn write_manifest(manifest: &DatasetManifest) -> String {
    let mut out = String::new();
    if manifest.labeled {
        out.push_str("index,image_path,label\n");
        for s in &manifest.samples {
            let label = s.label.map(Label::file_name).unwrap_or("");
            out.push_str(&format!(
                "{},{},{}\n",
                s.index,
                s.image_path.display(),
                label
            ));
        }
    } else {
        out.push_str("index,image_path\n");
        for s in &manifest.samples {
            out.push_str(&format!("{},{}\n", s.index, s.image_path.display()));
        }
    }
    out
}

/// Per-class counts and inverse-frequency weights w_c = N / (K * n_c).
pub fn class_stats(manifest: &DatasetManifest) -> Result<ClassStats, CorpusError> {
    if manifest.samples.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    let mut counts = [0usize; NUM_CLASSES];
    for s in &manifest.samples {
        let label = s
            .label
            .ok_or_else(|| CorpusError::UnlabeledSample(s.index.clone()))?;
        counts[label.code()] += 1;
    }
    let total = manifest.samples.len() as f64;
    let mut weights = [0.0; NUM_CLASSES];
    for label in Label::ALL {
        let n = counts[label.code()];
        if n == 0 {
            return Err(CorpusError::EmptyClass(label));
        }
        weights[label.code()] = total / (NUM_CLASSES as f64 * n as f64);
    }
    Ok(ClassStats { counts, weights })
}

/// Deterministic stratified split into (train, validation, test).
///
/// Per-class sizes are apportioned by largest remainder, so each split's
/// class ratio matches the parent within one sample per class. Samples keep
/// their original relative order inside each split.
pub fn split_manifest(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest), CorpusError> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(ft, fv, fe));
    }
    if manifest.samples.is_empty() {
        return Err(CorpusError::EmptyManifest);
    }
    for s in &manifest.samples {
        if s.label.is_none() {
            return Err(CorpusError::UnlabeledSample(s.index.clone()));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // position -> split id (0 train, 1 val, 2 test)
    let mut assignment = vec![0u8; manifest.samples.len()];
    for label in Label::ALL {
        let mut positions: Vec<usize> = manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        positions.shuffle(&mut rng);
        let sizes = apportion(positions.len(), [ft, fv, fe]);
        let mut cursor = 0;
        for (split_id, &size) in sizes.iter().enumerate() {
            for &pos in &positions[cursor..cursor + size] {
                assignment[pos] = split_id as u8;
            }
            cursor += size;
        }
    }

    let pick = |split_id: u8, tag: SplitTag| DatasetManifest {
        samples: manifest
            .samples
            .iter()
            .enumerate()
            .filter(|(i, _)| assignment[*i] == split_id)
            .map(|(_, s)| s.clone())
            .collect(),
        split_tag: tag,
        labeled: manifest.labeled,
    };
    Ok((
        pick(0, SplitTag::Train),
        pick(1, SplitTag::Validation),
        pick(2, SplitTag::Test),
    ))
}

/// Largest-remainder apportionment of `n` items into parts proportional to
/// `fractions`.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_from(rows: &[(&str, Option<Label>)]) -> DatasetManifest {
        DatasetManifest {
            samples: rows
                .iter()
                .map(|(idx, label)| Sample {
                    index: idx.to_string(),
                    image_path: PathBuf::from(format!("{idx}.png")),
                    label: *label,
                    ocr_text: None,
                })
                .collect(),
            split_tag: SplitTag::Custom,
            labeled: true,
        }
    }

    #[test]
    fn imbalanced_training_counts_give_expected_weights() {
        let mut rows = Vec::new();
        for i in 0..1942 {
            rows.push((format!("h{i}"), Some(Label::HateSpeech)));
        }
        for i in 0..1658 {
            rows.push((format!("n{i}"), Some(Label::NoHateSpeech)));
        }
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let stats = class_stats(&manifest_from(&refs)).unwrap();
        assert_eq!(stats.counts[Label::HateSpeech.code()], 1942);
        assert_eq!(stats.counts[Label::NoHateSpeech.code()], 1658);
        // 3600/(2*1942) and 3600/(2*1658), to 6 decimals
        assert!((stats.weights[Label::HateSpeech.code()] - 0.926880).abs() < 5e-7);
        assert!((stats.weights[Label::NoHateSpeech.code()] - 1.085645).abs() < 5e-7);
    }

    #[test]
    fn balanced_classes_give_unit_weights() {
        let rows: Vec<(String, Option<Label>)> = (0..20)
            .map(|i| {
                let label = if i < 10 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (format!("s{i}"), Some(label))
            })
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let stats = class_stats(&manifest_from(&refs)).unwrap();
        assert_eq!(stats.weights, [1.0, 1.0]);
    }

    #[test]
    fn empty_class_is_rejected() {
        let rows: Vec<(String, Option<Label>)> = (0..20)
            .map(|i| (format!("s{i}"), Some(Label::HateSpeech)))
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        assert!(matches!(
            class_stats(&manifest_from(&refs)),
            Err(CorpusError::EmptyClass(Label::NoHateSpeech))
        ));
    }

    #[test]
    fn weight_identity_sums_to_total() {
        let rows: Vec<(String, Option<Label>)> = (0..37)
            .map(|i| {
                let label = if i % 5 == 0 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (format!("s{i}"), Some(label))
            })
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let m = manifest_from(&refs);
        let stats = class_stats(&m).unwrap();
        let total: f64 = Label::ALL
            .iter()
            .map(|l| stats.counts[l.code()] as f64 * stats.weights[l.code()])
            .sum();
        assert!((total - m.samples.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn empty_file_with_header_loads_as_empty() {
        let m = parse_manifest("index,image_path,label\n", SplitTag::Train, None, false).unwrap();
        assert!(m.samples.is_empty());
        assert!(m.labeled);
    }

    #[test]
    fn duplicate_index_is_rejected() {
        let text = "index,image_path,label\na,x.png,hate\na,y.png,no_hate\n";
        assert!(matches!(
            parse_manifest(text, SplitTag::Train, None, false),
            Err(CorpusError::DuplicateIndex(i)) if i == "a"
        ));
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = "index,image_path,label\na,x.png,hate\nbroken-row\n";
        match parse_manifest(text, SplitTag::Train, None, false) {
            Err(CorpusError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn labels_parse_case_insensitively() {
        let text = "index,image_path,label\na,x.png,HATE\nb,y.png,No_Hate\n";
        let m = parse_manifest(text, SplitTag::Train, None, false).unwrap();
        assert_eq!(m.samples[0].label, Some(Label::HateSpeech));
        assert_eq!(m.samples[1].label, Some(Label::NoHateSpeech));
    }

    #[test]
    fn manifest_round_trips() {
        let text = "index,image_path,label\na,imgs/x.png,hate\nb,imgs/y.png,no_hate\n";
        let m = parse_manifest(text, SplitTag::Train, None, false).unwrap();
        assert_eq!(write_manifest(&m), text);
    }

    #[test]
    fn split_sizes_and_partition() {
        let rows: Vec<(String, Option<Label>)> = (0..100)
            .map(|i| {
                let label = if i % 2 == 0 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (format!("s{i}"), Some(label))
            })
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let m = manifest_from(&refs);
        let (tr, va, te) = split_manifest(&m, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(tr.samples.len(), 80);
        assert_eq!(va.samples.len(), 10);
        assert_eq!(te.samples.len(), 10);
        let mut all: Vec<String> = tr
            .samples
            .iter()
            .chain(&va.samples)
            .chain(&te.samples)
            .map(|s| s.index.clone())
            .collect();
        all.sort();
        let mut orig: Vec<String> = m.samples.iter().map(|s| s.index.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_deterministic() {
        let rows: Vec<(String, Option<Label>)> = (0..50)
            .map(|i| {
                let label = if i % 3 == 0 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (format!("s{i}"), Some(label))
            })
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let m = manifest_from(&refs);
        let a = split_manifest(&m, (0.6, 0.2, 0.2), 42).unwrap();
        let b = split_manifest(&m, (0.6, 0.2, 0.2), 42).unwrap();
        let idx = |d: &DatasetManifest| {
            d.samples
                .iter()
                .map(|s| s.index.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(idx(&a.0), idx(&b.0));
        assert_eq!(idx(&a.1), idx(&b.1));
        assert_eq!(idx(&a.2), idx(&b.2));
    }

    #[test]
    fn bad_fractions_rejected() {
        let m = manifest_from(&[
            ("a", Some(Label::HateSpeech)),
            ("b", Some(Label::NoHateSpeech)),
        ]);
        assert!(matches!(
            split_manifest(&m, (0.5, 0.5, 0.5), 0),
            Err(CorpusError::BadFractions(..))
        ));
    }

    #[test]
    fn split_is_stratified_within_one_sample() {
        let rows: Vec<(String, Option<Label>)> = (0..97)
            .map(|i| {
                let label = if i % 4 == 0 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (format!("s{i}"), Some(label))
            })
            .collect();
        let refs: Vec<(&str, Option<Label>)> = rows.iter().map(|(s, l)| (s.as_str(), *l)).collect();
        let m = manifest_from(&refs);
        let (tr, va, te) = split_manifest(&m, (0.7, 0.15, 0.15), 11).unwrap();
        for (split, frac) in [(&tr, 0.7), (&va, 0.15), (&te, 0.15)] {
            for label in Label::ALL {
                let parent = m.samples.iter().filter(|s| s.label == Some(label)).count();
                let got = split
                    .samples
                    .iter()
                    .filter(|s| s.label == Some(label))
                    .count() as f64;
                assert!((got - parent as f64 * frac).abs() <= 1.0);
            }
        }
    }
}
