//! Command-line entry point: ingest / train / evaluate / ablate / report.
//!
//! Every command loads and fully validates the run configuration before any
//! side effect, then works inside a fresh timestamped directory under
//! `paths.output_dir` that contains a copy of the resolved configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hatefuse::config::{ClassWeightSetting, RunConfig};
use hatefuse::corpus::{self, DatasetManifest, SplitTag};
use hatefuse::evaluator::{self, AblationSpec};
use hatefuse::model::EnsembleModel;
use hatefuse::ocr::{self, OcrCache};
use hatefuse::trainer;

#[derive(Parser)]
#[command(
    name = "hatefuse",
    version,
    about = "Multimodal hate-speech classification for text-embedded images"
)]
struct Cli {
    /// Run configuration file (key = value grammar; see config.example.conf).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override `paths.output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override `train.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Populate the OCR cache for every sample in the configured manifests.
    Ingest,
    /// Train the ensemble; writes final/best checkpoints, history, and plots.
    Train {
        /// Run OCR ingest for any uncached sample before training.
        #[arg(long)]
        auto_ingest: bool,
        /// Continue from an existing checkpoint (same configuration).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled manifest; writes a metric report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to evaluate (defaults to `paths.test_manifest`,
        /// falling back to `paths.validation_manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train and evaluate every configured variant on identical splits.
    Ablate,
    /// Per-instance empirical report for a checkpoint on a manifest.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print the version string.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Version) {
        println!("hatefuse {}", hatefuse::VERSION);
        return Ok(());
    }

    let config_path = cli
        .config
        .as_deref()
        .context("--config is required for this command")?;
    let mut config = RunConfig::load(config_path)?;
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    config.validate()?;

    match cli.command {
        Command::Ingest => cmd_ingest(&config),
        Command::Train {
            auto_ingest,
            resume,
        } => cmd_train(&config, auto_ingest, resume.as_deref()),
        Command::Evaluate {
            checkpoint,
            manifest,
        } => cmd_evaluate(&config, &checkpoint, manifest.as_deref()),
        Command::Ablate => cmd_ablate(&config),
        Command::Report {
            checkpoint,
            manifest,
        } => cmd_report(&config, &checkpoint, manifest.as_deref()),
        Command::Version => unreachable!("handled above"),
    }
}

/// Fresh timestamped run directory holding a copy of the resolved config.
fn make_run_dir(config: &RunConfig, command: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f");
    let mut dir = config.output_dir.join(format!("{stamp}-{command}"));
    let mut n = 1;
    while dir.exists() {
        dir = config.output_dir.join(format!("{stamp}-{command}-{n}"));
        n += 1;
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.resolved.conf"), config.to_conf())
        .context("writing resolved config")?;
    Ok(dir)
}

fn load_split(config: &RunConfig, path: &Path, tag: SplitTag) -> Result<DatasetManifest> {
    let manifest = match &config.image_root {
        Some(root) => corpus::load_manifest_with_root(path, tag, Some(root))?,
        None => corpus::load_manifest(path, tag)?,
    };
    Ok(manifest)
}

fn open_cache(config: &RunConfig) -> Result<OcrCache> {
    if let Some(parent) = config.cache_store.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(OcrCache::open(&config.cache_store)?)
}

/// Fill `ocr_text` for every sample from the cache, optionally extracting
/// misses first.
fn resolve_ocr(
    config: &RunConfig,
    manifest: &mut DatasetManifest,
    cache: &mut OcrCache,
    auto_ingest: bool,
) -> Result<()> {
    if auto_ingest {
        let summary =
            ocr::ingest_samples(&manifest.samples, cache, &config.ocr, config.ocr_workers);
        if !summary.errors.is_empty() {
            bail!(
                "OCR extraction failed for {} sample(s): {}",
                summary.errors.len(),
                format_errors(&summary.errors)
            );
        }
    }
    let mut missing = Vec::new();
    for s in &mut manifest.samples {
        match cache.get(&s.index, &config.ocr.engine_id) {
            Some(text) => s.ocr_text = Some(text.to_string()),
            None => missing.push(s.index.clone()),
        }
    }
    if !missing.is_empty() {
        bail!(
            "OCR cache has no entry for {} sample(s) ({}); run `hatefuse ingest` first \
             or pass --auto-ingest",
            missing.len(),
            missing.join(", ")
        );
    }
    Ok(())
}

fn format_errors(errors: &[(String, String)]) -> String {
    errors
        .iter()
        .map(|(idx, msg)| format!("{idx}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

fn configured_manifests(config: &RunConfig) -> Vec<(&'static str, &PathBuf, SplitTag)> {
    let mut out = Vec::new();
    if let Some(p) = &config.train_manifest {
        out.push(("train", p, SplitTag::Train));
    }
    if let Some(p) = &config.validation_manifest {
        out.push(("validation", p, SplitTag::Validation));
    }
    if let Some(p) = &config.test_manifest {
        out.push(("test", p, SplitTag::Test));
    }
    out
}

fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let manifests = configured_manifests(config);
    if manifests.is_empty() {
        bail!("no manifests configured; set paths.train_manifest (and friends)");
    }
    // validate every manifest before touching the cache
    let mut loaded = Vec::new();
    for (name, path, tag) in manifests {
        let m = load_split(config, path, tag)
            .with_context(|| format!("loading {name} manifest {}", path.display()))?;
        loaded.push((name, m));
    }
    let mut cache = open_cache(config)?;
    let mut failed = false;
    for (name, manifest) in &loaded {
        let summary = ocr::ingest_samples(
            &manifest.samples,
            &mut cache,
            &config.ocr,
            config.ocr_workers,
        );
        println!(
            "{name}: {} hits, {} misses extracted, {} errors",
            summary.hits,
            summary.misses,
            summary.errors.len()
        );
        if !summary.errors.is_empty() {
            eprintln!("{name}: failed indices: {}", format_errors(&summary.errors));
            failed = true;
        }
    }
    if failed {
        bail!("OCR ingest incomplete");
    }
    println!("cache store: {}", config.cache_store.display());
    Ok(())
}

fn effective_train_config(
    config: &RunConfig,
    train: &DatasetManifest,
) -> Result<trainer::TrainConfig> {
    let mut tc = config.train.clone();
    tc.class_weights = match &config.class_weights {
        ClassWeightSetting::Fixed(w) => *w,
        ClassWeightSetting::Auto => corpus::class_stats(train)?.weights,
    };
    Ok(tc)
}

fn cmd_train(config: &RunConfig, auto_ingest: bool, resume: Option<&Path>) -> Result<()> {
    let train_path = config
        .train_manifest
        .as_ref()
        .context("paths.train_manifest must be set for `train`")?;
    let val_path = config
        .validation_manifest
        .as_ref()
        .context("paths.validation_manifest must be set for `train`")?;
    let mut train = load_split(config, train_path, SplitTag::Train)?;
    let mut validation = load_split(config, val_path, SplitTag::Validation)?;
    let resume_ckpt = resume.map(trainer::load_checkpoint).transpose()?;

    let mut cache = open_cache(config)?;
    resolve_ocr(config, &mut train, &mut cache, auto_ingest)?;
    resolve_ocr(config, &mut validation, &mut cache, auto_ingest)?;

    let train_cfg = effective_train_config(config, &train)?;
    let run_dir = make_run_dir(config, "train")?;

    let (model_cfg_desc, outcome) = match resume_ckpt {
        Some(ckpt) => {
            let desc = format!("resumed from epoch {}", ckpt.epoch);
            let (_, outcome) = trainer::resume(ckpt, &train_cfg, &train, &validation)?;
            (desc, outcome)
        }
        None => {
            let model_cfg = config.model_config(hatefuse::model::BranchKind::ALL.to_vec());
            let mut model = EnsembleModel::new(model_cfg)?;
            let outcome = trainer::fit(&train_cfg, &train, &validation, &mut model)?;
            ("trained from scratch".to_string(), outcome)
        }
    };

    trainer::save_checkpoint(&outcome.final_checkpoint, &run_dir.join("final.ckpt"))?;
    trainer::save_checkpoint(&outcome.best_checkpoint, &run_dir.join("best.ckpt"))?;
    std::fs::write(run_dir.join("history.csv"), outcome.history.to_csv())
        .context("writing history.csv")?;
    evaluator::plot_history(&outcome.history, &run_dir)?;

    let last = outcome
        .history
        .records
        .last()
        .context("training produced no epochs")?;
    println!("{model_cfg_desc}; {} epochs", outcome.history.records.len());
    println!(
        "final: train_loss {:.6} train_acc {:.4} val_loss {:.6} val_acc {:.4}",
        last.train_loss, last.train_acc, last.val_loss, last.val_acc
    );
    println!("artifacts: {}", run_dir.display());
    Ok(())
}

fn eval_manifest_path<'a>(config: &'a RunConfig, explicit: Option<&'a Path>) -> Result<&'a Path> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    config
        .test_manifest
        .as_deref()
        .or(config.validation_manifest.as_deref())
        .context("no manifest: pass --manifest or set paths.test_manifest")
}

fn load_eval_manifest(config: &RunConfig, explicit: Option<&Path>) -> Result<DatasetManifest> {
    let path = eval_manifest_path(config, explicit)?;
    let mut manifest = load_split(config, path, SplitTag::Test)?;
    if !manifest.labeled {
        bail!("manifest {} has no label column", path.display());
    }
    let mut cache = open_cache(config)?;
    resolve_ocr(config, &mut manifest, &mut cache, false)?;
    Ok(manifest)
}

fn cmd_evaluate(config: &RunConfig, checkpoint: &Path, manifest: Option<&Path>) -> Result<()> {
    let ckpt = trainer::load_checkpoint(checkpoint)?;
    let manifest = load_eval_manifest(config, manifest)?;
    let run_dir = make_run_dir(config, "evaluate")?;

    let report = evaluator::evaluate_manifest(&ckpt.model, &manifest)?;
    std::fs::write(
        run_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report).context("serializing metrics")?,
    )
    .context("writing metrics.json")?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "accuracy {:.4}  macro_precision {:.4}  macro_recall {:.4}  macro_f1 {:.4}",
        report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1
    );
    println!("artifacts: {}", run_dir.display());
    Ok(())
}

fn cmd_ablate(config: &RunConfig) -> Result<()> {
    let train_path = config
        .train_manifest
        .as_ref()
        .context("paths.train_manifest must be set for `ablate`")?;
    let val_path = config
        .validation_manifest
        .as_ref()
        .context("paths.validation_manifest must be set for `ablate`")?;
    let mut train = load_split(config, train_path, SplitTag::Train)?;
    let mut validation = load_split(config, val_path, SplitTag::Validation)?;
    let mut cache = open_cache(config)?;
    resolve_ocr(config, &mut train, &mut cache, false)?;
    resolve_ocr(config, &mut validation, &mut cache, false)?;

    let train_cfg = effective_train_config(config, &train)?;
    let model_cfg = config.model_config(hatefuse::model::BranchKind::ALL.to_vec());
    let spec = AblationSpec {
        variants: config.ablation_variants.clone(),
    };
    let run_dir = make_run_dir(config, "ablate")?;
    let table = evaluator::run_ablation(&spec, &train, &validation, &model_cfg, &train_cfg)?;
    std::fs::write(run_dir.join("ablation.csv"), table.to_csv()).context("writing ablation.csv")?;
    std::fs::write(run_dir.join("ablation.md"), table.to_markdown())
        .context("writing ablation.md")?;
    print!("{}", table.to_markdown());
    println!("artifacts: {}", run_dir.display());
    Ok(())
}

fn cmd_report(config: &RunConfig, checkpoint: &Path, manifest: Option<&Path>) -> Result<()> {
    let ckpt = trainer::load_checkpoint(checkpoint)?;
    let manifest = load_eval_manifest(config, manifest)?;
    let run_dir = make_run_dir(config, "report")?;

    let report = evaluator::empirical_report(&ckpt.model, &manifest)?;
    std::fs::write(run_dir.join("empirical_report.csv"), report.to_csv())
        .context("writing empirical_report.csv")?;
    std::fs::write(run_dir.join("empirical_report.md"), report.to_markdown())
        .context("writing empirical_report.md")?;
    print!("{}", report.to_markdown());
    println!("artifacts: {}", run_dir.display());
    Ok(())
}
