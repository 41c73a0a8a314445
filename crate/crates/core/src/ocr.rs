//! OCR extraction behind a process boundary, plus a persistent result cache.
//!
//! The engine contract is deliberately small: the engine is a program that
//! takes an image path argument, prints the recognized text on stdout, and
//! exits 0. Any conforming engine can substitute for the default
//! (`tesseract <image> stdout`).

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;

/// Placeholder in engine args that expands to the image path. When absent,
/// the path is appended as the final argument.
pub const IMAGE_PLACEHOLDER: &str = "{image}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrEngine {
    pub program: String,
    pub args: Vec<String>,
    /// Engine + version tag; cache entries are keyed by (index, engine_id).
    pub engine_id: String,
    pub timeout: Duration,
}

impl Default for OcrEngine {
    fn default() -> Self {
        OcrEngine {
            program: "tesseract".to_string(),
            args: vec![IMAGE_PLACEHOLDER.to_string(), "stdout".to_string()],
            engine_id: "tesseract-default".to_string(),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawOcrResult {
    pub index: String,
    pub text: String,
    pub engine_id: String,
}

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("OCR engine `{0}` unavailable: {1}")]
    EngineUnavailable(String, std::io::Error),
    #[error("OCR engine failed with status {status}: {stderr}")]
    EngineFailure { status: i32, stderr: String },
    #[error("OCR engine timed out after {0:?}")]
    Timeout(Duration),
    #[error("cache write failed at {path}: {source}")]
    CacheWriteFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cache read failed at {path}: {source}")]
    CacheReadFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt cache record at {path} line {line}")]
    CorruptCacheRecord { path: PathBuf, line: usize },
}

/// Run the engine on one image and return its stdout verbatim.
pub fn extract_text(image_path: &Path, engine: &OcrEngine) -> Result<RawOcrResult, OcrError> {
    let path_str = image_path.to_string_lossy().into_owned();
    let mut cmd = Command::new(&engine.program);
    let mut placed = false;
    for arg in &engine.args {
        if arg == IMAGE_PLACEHOLDER {
            cmd.arg(&path_str);
            placed = true;
        } else {
            cmd.arg(arg);
        }
    }
    if !placed {
        cmd.arg(&path_str);
    }
    cmd.stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .stdin(Stdio::null());

    let mut child = cmd
        .spawn()
        .map_err(|e| OcrError::EngineUnavailable(engine.program.clone(), e))?;

    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr_pipe.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + engine.timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(OcrError::Timeout(engine.timeout));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(OcrError::EngineUnavailable(engine.program.clone(), e)),
        }
    };

    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    if !status.success() {
        let excerpt: String = String::from_utf8_lossy(&stderr).chars().take(400).collect();
        return Err(OcrError::EngineFailure {
            status: status.code().unwrap_or(-1),
            stderr: excerpt,
        });
    }
    Ok(RawOcrResult {
        index: String::new(),
        text: String::from_utf8_lossy(&stdout).into_owned(),
        engine_id: engine.engine_id.clone(),
    })
}

/// Collapse whitespace runs to single spaces, trim the ends, and drop
/// non-printable control characters. Case and punctuation are preserved.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else if ch.is_control() {
            // stripped
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    index: String,
    engine_id: String,
    text: String,
}

/// Append-only JSONL store of normalized OCR results keyed by
/// (index, engine_id).
#[derive(Debug)]
pub struct OcrCache {
    store_path: PathBuf,
    entries: HashMap<(String, String), String>,
    writer: Mutex<()>,
}

impl OcrCache {
    /// Open (or create) a cache store, loading all existing entries.
    pub fn open(store_path: &Path) -> Result<OcrCache, OcrError> {
        let mut entries = HashMap::new();
        if store_path.exists() {
            let file =
                std::fs::File::open(store_path).map_err(|source| OcrError::CacheReadFailure {
                    path: store_path.to_path_buf(),
                    source,
                })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| OcrError::CacheReadFailure {
                    path: store_path.to_path_buf(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(&line).map_err(|_| OcrError::CorruptCacheRecord {
                        path: store_path.to_path_buf(),
                        line: i + 1,
                    })?;
                entries.insert((rec.index, rec.engine_id), rec.text);
            }
        }
        Ok(OcrCache {
            store_path: store_path.to_path_buf(),
            entries,
            writer: Mutex::new(()),
        })
    }

    pub fn store_path(&self) -> &Path {
        &self.store_path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: &str, engine_id: &str) -> Option<&str> {
        self.entries
            .get(&(index.to_string(), engine_id.to_string()))
            .map(String::as_str)
    }

    /// Insert an entry and persist it as one appended record. The record is
    /// written with a single write call so concurrent appenders cannot
    /// interleave partial lines.
    pub fn insert(&mut self, index: &str, engine_id: &str, text: &str) -> Result<(), OcrError> {
        let rec = CacheRecord {
            index: index.to_string(),
            engine_id: engine_id.to_string(),
            text: text.to_string(),
        };
        let mut line = serde_json::to_string(&rec).expect("cache record serializes");
        line.push('\n');
        {
            let _guard = self.writer.lock().unwrap();
            if let Some(parent) = self.store_path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|source| {
                        OcrError::CacheWriteFailure {
                            path: self.store_path.clone(),
                            source,
                        }
                    })?;
                }
            }
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.store_path)
                .map_err(|source| OcrError::CacheWriteFailure {
                    path: self.store_path.clone(),
                    source,
                })?;
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| OcrError::CacheWriteFailure {
                    path: self.store_path.clone(),
                    source,
                })?;
        }
        self.entries.insert((rec.index, rec.engine_id), rec.text);
        Ok(())
    }
}

/// Cached normalized text for a sample, extracting on miss. A second call
/// for the same (index, engine_id) performs no engine invocation.
pub fn get_or_extract(
    sample: &Sample,
    cache: &mut OcrCache,
    engine: &OcrEngine,
) -> Result<String, OcrError> {
    if let Some(text) = cache.get(&sample.index, &engine.engine_id) {
        return Ok(text.to_string());
    }
    let raw = extract_text(&sample.image_path, engine)?;
    let text = normalize_text(&raw.text);
    cache.insert(&sample.index, &engine.engine_id, &text)?;
    Ok(text)
}

/// Outcome of a bulk ingest pass.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub hits: usize,
    pub misses: usize,
    pub errors: Vec<(String, String)>,
}

/// Populate the cache for every sample in order. Extraction work runs on a
/// bounded worker pool; cache writes stay serialized.
pub fn ingest_samples(
    samples: &[Sample],
    cache: &mut OcrCache,
    engine: &OcrEngine,
    workers: usize,
) -> IngestSummary {
    let mut summary = IngestSummary::default();
    let mut pending = Vec::new();
    for s in samples {
        if cache.get(&s.index, &engine.engine_id).is_some() {
            summary.hits += 1;
        } else {
            pending.push(s);
        }
    }

    let workers = workers.max(1);
    let results: Mutex<Vec<(usize, Result<String, OcrError>)>> = Mutex::new(Vec::new());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= pending.len() {
                    break;
                }
                let res = extract_text(&pending[i].image_path, engine)
                    .map(|raw| normalize_text(&raw.text));
                results.lock().unwrap().push((i, res));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    for (i, res) in results {
        match res {
            Ok(text) => match cache.insert(&pending[i].index, &engine.engine_id, &text) {
                Ok(()) => summary.misses += 1,
                Err(e) => summary
                    .errors
                    .push((pending[i].index.clone(), e.to_string())),
            },
            Err(e) => summary
                .errors
                .push((pending[i].index.clone(), e.to_string())),
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_whitespace() {
        assert_eq!(normalize_text("  Putin\n\n is…  "), "Putin is…");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("a\tb\r\nc"), "a b c");
    }

    #[test]
    fn normalize_strips_control_chars_and_preserves_case() {
        assert_eq!(normalize_text("A\u{0} Mixed\u{7} CASE!"), "A Mixed CASE!");
    }

    #[test]
    fn normalize_is_idempotent_on_samples() {
        for s in ["  a  b ", "x\n\ny", "", "\t\t", "No Change"] {
            let once = normalize_text(s);
            assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn cache_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("ocr.jsonl");
        {
            let mut cache = OcrCache::open(&store).unwrap();
            cache.insert("a", "engine-x", "hello world").unwrap();
            cache.insert("b", "engine-x", "").unwrap();
            cache.insert("a", "engine-y", "other engine").unwrap();
        }
        let cache = OcrCache::open(&store).unwrap();
        assert_eq!(cache.len(), 3);
        assert_eq!(cache.get("a", "engine-x"), Some("hello world"));
        assert_eq!(cache.get("b", "engine-x"), Some(""));
        assert_eq!(cache.get("a", "engine-y"), Some("other engine"));
        assert_eq!(cache.get("a", "engine-z"), None);
    }

    #[test]
    fn corrupt_cache_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("ocr.jsonl");
        std::fs::write(
            &store,
            "{\"index\":\"a\",\"engine_id\":\"x\",\"text\":\"t\"}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(
            OcrCache::open(&store),
            Err(OcrError::CorruptCacheRecord { line: 2, .. })
        ));
    }

    #[test]
    fn missing_engine_is_engine_unavailable() {
        let engine = OcrEngine {
            program: "definitely-not-an-ocr-engine".into(),
            ..OcrEngine::default()
        };
        assert!(matches!(
            extract_text(Path::new("x.png"), &engine),
            Err(OcrError::EngineUnavailable(..))
        ));
    }

    #[test]
    fn failing_engine_reports_status_and_stderr() {
        let engine = OcrEngine {
            program: "sh".into(),
            args: vec!["-c".into(), "echo boom >&2; exit 3".into(), "--".into()],
            engine_id: "fail".into(),
            timeout: Duration::from_secs(5),
        };
        match extract_text(Path::new("x.png"), &engine) {
            Err(OcrError::EngineFailure { status, stderr }) => {
                assert_eq!(status, 3);
                assert!(stderr.contains("boom"));
            }
            other => panic!("expected EngineFailure, got {other:?}"),
        }
    }

    #[test]
    fn slow_engine_times_out() {
        let engine = OcrEngine {
            program: "sh".into(),
            args: vec!["-c".into(), "sleep 5".into()],
            engine_id: "slow".into(),
            timeout: Duration::from_millis(100),
        };
        assert!(matches!(
            extract_text(Path::new("x.png"), &engine),
            Err(OcrError::Timeout(_))
        ));
    }
}
