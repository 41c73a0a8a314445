//! Synthetic text-embedded-image fixtures: a block-capital bitmap font
//! renderer and small labeled corpora for desk-scale training runs.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
}

/// 5x7 block capitals, A-Z and space. Rows top to bottom, 5 bits per row.
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        _ => [0; 7],
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderStyle {
    /// Pixel size of one font cell unit; 7*scale tall glyphs.
    pub scale: u32,
    pub foreground: [u8; 3],
    pub background: [u8; 3],
    pub padding: u32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        // ~48pt black-on-white
        RenderStyle {
            scale: 9,
            foreground: [0, 0, 0],
            background: [255, 255, 255],
            padding: 24,
        }
    }
}

/// Render a single line of block capitals into a PNG.
pub fn render_text_image(text: &str, path: &Path, style: &RenderStyle) -> Result<(), SynthError> {
    let cols = text.chars().count().max(1) as u32;
    let width = cols * 6 * style.scale + 2 * style.padding;
    let height = 7 * style.scale + 2 * style.padding;
    let mut img = RgbImage::from_pixel(width, height, Rgb(style.background));
    for (i, c) in text.chars().enumerate() {
        let g = glyph(c);
        let x0 = style.padding + (i as u32) * 6 * style.scale;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..5u32 {
                if bits & (1 << (4 - col)) != 0 {
                    for dy in 0..style.scale {
                        for dx in 0..style.scale {
                            let x = x0 + col * style.scale + dx;
                            let y = style.padding + row as u32 * style.scale + dy;
                            img.put_pixel(x, y, Rgb(style.foreground));
                        }
                    }
                }
            }
        }
    }
    img.save(path).map_err(|source| SynthError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// How labels relate to the two synthetic signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusMode {
    /// Image brightness and word choice both fully determine the label.
    Separable,
    /// label = image_bit OR text_bit: neither modality alone separates the
    /// corpus, their union does.
    Union,
}

const WORDS_ZERO: [&str; 4] = ["CALM RIVER", "QUIET MEADOW", "GENTLE BREEZE", "OPEN FIELD"];
const WORDS_ONE: [&str; 4] = ["STORM FRONT", "THUNDER ROLL", "BLAZE LINE", "IRON FIST"];

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub index: String,
    pub image_path: PathBuf,
    pub label: Label,
    pub text: String,
}

/// Generate `n` labeled text-embedded images under `dir`, with a manifest at
/// `dir/manifest.csv` and a `<image>.txt` sidecar carrying each image's
/// embedded text (consumed by the sidecar OCR engine in tests).
pub fn generate_corpus(
    dir: &Path,
    n: usize,
    mode: CorpusMode,
) -> Result<(PathBuf, Vec<SynthSample>), SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| SynthError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    // index prefix from the corpus directory, so corpora generated side by
    // side (train/validation/test) never collide in the OCR cache
    let prefix = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synth".to_string());
    let mut samples = Vec::with_capacity(n);
    let mut manifest = String::from("index,image_path,label\n");
    for i in 0..n {
        let (img_bit, txt_bit, label) = match mode {
            CorpusMode::Separable => {
                let b = i % 2;
                (
                    b,
                    b,
                    if b == 1 {
                        Label::HateSpeech
                    } else {
                        Label::NoHateSpeech
                    },
                )
            }
            CorpusMode::Union => {
                let img = (i / 2) % 2;
                let txt = i % 2;
                let label = if img | txt == 1 {
                    Label::HateSpeech
                } else {
                    Label::NoHateSpeech
                };
                (img, txt, label)
            }
        };
        let words = if txt_bit == 1 { WORDS_ONE } else { WORDS_ZERO };
        let text = words[(i / 4) % words.len()].to_string();
        // dark images for bit 1, light for bit 0, with slight per-sample shift
        let base = if img_bit == 1 { 60u8 } else { 215u8 };
        let bg = base.wrapping_add((i % 8) as u8 * 3);
        let fg = if img_bit == 1 { 230 } else { 15 };
        let style = RenderStyle {
            scale: 3,
            foreground: [fg; 3],
            background: [bg; 3],
            padding: 8,
        };
        let index = format!("{prefix}-{i:03}");
        let image_path = dir.join(format!("{index}.png"));
        render_text_image(&text, &image_path, &style)?;
        let sidecar = dir.join(format!("{index}.png.txt"));
        std::fs::write(&sidecar, &text).map_err(|source| SynthError::Io {
            path: sidecar,
            source,
        })?;
        manifest.push_str(&format!("{index},{index}.png,{}\n", label.file_name()));
        samples.push(SynthSample {
            index,
            image_path,
            label,
            text,
        });
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|source| SynthError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    Ok((manifest_path, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_image_decodes_with_expected_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        render_text_image("HELLO", &path, &RenderStyle::default()).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 5 * 6 * 9 + 48);
        assert_eq!(img.height(), 7 * 9 + 48);
    }

    #[test]
    fn union_corpus_covers_all_combinations() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest_path, samples) = generate_corpus(dir.path(), 40, CorpusMode::Union).unwrap();
        assert!(manifest_path.exists());
        assert_eq!(samples.len(), 40);
        let hate = samples
            .iter()
            .filter(|s| s.label == Label::HateSpeech)
            .count();
        assert_eq!(hate, 30); // OR of two balanced bits
        for s in &samples {
            assert!(s.image_path.exists());
            assert!(s.image_path.with_extension("png.txt").exists());
        }
    }

    #[test]
    fn separable_corpus_is_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let (_, samples) = generate_corpus(dir.path(), 40, CorpusMode::Separable).unwrap();
        let hate = samples
            .iter()
            .filter(|s| s.label == Label::HateSpeech)
            .count();
        assert_eq!(hate, 20);
    }

    #[test]
    fn manifest_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest_path, _) = generate_corpus(dir.path(), 8, CorpusMode::Separable).unwrap();
        let m =
            crate::corpus::load_manifest(&manifest_path, crate::corpus::SplitTag::Train).unwrap();
        assert_eq!(m.samples.len(), 8);
    }
}
