use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use signforge::catalog::{load_catalog, read_manifest};
use signforge::corpus::{parse_coco_annotations, prepare_corpus, write_prepare_manifest, ExclusionPolicy};
use signforge::dataset_io::{
    gtsdb_to_annotation_set, parse_gtsdb_gt, read_ground_truth, read_predictions, write_annotations,
};
use signforge::eval::{category_recall_csv, evaluate as score, select_threshold, ThresholdSource};
use signforge::synth::{generate_dataset, BackgroundDir, GenerateOptions, GenerationConfig};

use crate::manifest::RunManifest;
use crate::{EvaluateArgs, GenerateArgs, ImportArgs, InitConfigArgs, PrepareArgs, Preset};

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(line: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.context("writing to stdout"),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn prepare(args: &PrepareArgs) -> Result<()> {
    let mut manifest = RunManifest::new(&args.run_id, "prepare");
    let outcome = run_prepare(args, &mut manifest);
    manifest.finish(&args.out, outcome)
}

fn run_prepare(args: &PrepareArgs, manifest: &mut RunManifest) -> Result<()> {
    let policy = match &args.policy {
        Some(path) => serde_json::from_slice(&read(path)?)
            .with_context(|| format!("parsing policy {}", path.display()))?,
        None => ExclusionPolicy::default(),
    };
    if !args.corpus_dir.is_dir() {
        bail!("corpus directory {} is not readable", args.corpus_dir.display());
    }
    let document = read(&args.annotations)?;
    let index = manifest
        .time("parse", || parse_coco_annotations(&document))
        .with_context(|| format!("parsing {}", args.annotations.display()))?;
    manifest.count("images_indexed", index.images.len());

    let backgrounds = args.out.join("backgrounds");
    let summary = manifest.time("filter_standardize", || {
        prepare_corpus(&index, &policy, &args.corpus_dir, &backgrounds, args.workers)
    })?;
    manifest.count("images_accepted", summary.accepted);
    manifest.count("images_rejected", summary.records.len() - summary.accepted);
    manifest.count("images_unreadable", summary.unreadable);
    let csv = write_prepare_manifest(&summary.records)?;
    write(&args.out.join("prepare_manifest.csv"), &csv)?;

    log::info!("{} of {} images accepted", summary.accepted, summary.records.len());
    if summary.accepted == 0 {
        log::warn!("no background survived the filter");
    }
    if summary.unreadable > 0 {
        bail!("{} accepted images could not be decoded; see prepare_manifest.csv", summary.unreadable);
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let mut manifest = RunManifest::new(&args.run_id, "generate");
    let outcome = run_generate(args, &mut manifest);
    manifest.finish(&args.out, outcome)
}

fn run_generate(args: &GenerateArgs, manifest: &mut RunManifest) -> Result<()> {
    let snapshot = read(&args.config)?;
    manifest.config_snapshot = Some(String::from_utf8_lossy(&snapshot).into_owned());
    let mut config = GenerationConfig::from_json(&snapshot)
        .with_context(|| format!("config {}", args.config.display()))?;
    if let Some(n) = args.n {
        config.n_samples = n;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    manifest.master_seed = Some(config.master_seed);
    manifest.effective_config = Some(serde_json::to_value(&config)?);

    let catalog = manifest
        .time("load_templates", || read_manifest(&args.templates).and_then(|m| load_catalog(&m)))
        .with_context(|| format!("templates {}", args.templates.display()))?;
    manifest.count("template_classes", catalog.class_count());
    let backgrounds = BackgroundDir::open(&args.backgrounds)?;
    manifest.count("backgrounds", backgrounds.paths().len());
    if backgrounds.paths().is_empty() {
        bail!("no background PNGs in {}", args.backgrounds.display());
    }

    let options = GenerateOptions {
        out_dir: args.out.clone(),
        run_id: args.run_id.clone(),
        workers: args.workers,
        resume: args.resume,
        emit_masks: args.emit_masks,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write(&args.out.join("config.json"), &snapshot)?;
    let summary = manifest.time("generate", || generate_dataset(&config, &backgrounds, &catalog, &options))?;
    manifest.count("samples_requested", config.n_samples);
    manifest.count("samples_generated", summary.generated);
    manifest.count("samples_resumed", summary.resumed);
    manifest.count("samples_failed", summary.failures.len());
    manifest.count("annotations", summary.annotations);
    if !summary.failures.is_empty() {
        let listed: Vec<String> = summary.failures.iter().map(|f| f.sample_index.to_string()).collect();
        bail!("{} samples failed: {}", listed.len(), listed.join(", "));
    }
    Ok(())
}

fn load_pair(predictions: &Path, ground_truth: &Path) -> Result<(Vec<signforge::dataset_io::Detection>, signforge::dataset_io::GroundTruth)> {
    let dets = read_predictions(&read(predictions)?)
        .with_context(|| format!("predictions {}", predictions.display()))?;
    let gt = read_ground_truth(&read(ground_truth)?)
        .with_context(|| format!("ground truth {}", ground_truth.display()))?;
    Ok((dets, gt))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (threshold, source) = match (&args.select_threshold_on, args.threshold) {
        (Some(pair), _) => {
            let [val_pred, val_gt]: &[PathBuf; 2] = pair.as_slice().try_into().expect("clap enforces two values");
            let (dets, gt) = load_pair(val_pred, val_gt)?;
            if let Some(d) = dets.iter().find(|d| !gt.image_ids.contains(&d.image_id)) {
                bail!("validation prediction references unknown image id {}", d.image_id);
            }
            let t = select_threshold(&dets, &gt.boxes, args.iou).context("selecting threshold")?;
            log::info!("validation threshold {t}");
            (t, ThresholdSource::Validation)
        }
        (None, Some(t)) => (t, ThresholdSource::Fixed),
        (None, None) => (0.0, ThresholdSource::Fixed),
    };
    let (dets, gt) = load_pair(&args.predictions, &args.ground_truth)?;
    let report = score(&dets, &gt, args.iou, threshold, source)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write(&args.out.join("report.json"), &json)?;
    write(&args.out.join("category_recall.csv"), &category_recall_csv(&report.per_category_recall))?;
    emit(
        &serde_json::json!({
            "map": report.map,
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "threshold": report.chosen_threshold,
        })
        .to_string(),
    )
}

pub fn import_gtsdb(args: &ImportArgs) -> Result<()> {
    let text = String::from_utf8(read(&args.gt)?).context("gt file is not UTF-8")?;
    let records = parse_gtsdb_gt(&text).with_context(|| format!("parsing {}", args.gt.display()))?;
    let set = gtsdb_to_annotation_set(&records, args.width, args.height)?;
    let (json, csv) = write_annotations(&set)?;
    write(&args.out, &json)?;
    write(&args.out.with_extension("csv"), &csv)?;
    log::info!("{} images, {} signs", set.images.len(), set.annotations.len());
    Ok(())
}

pub fn init_config(args: &InitConfigArgs) -> Result<()> {
    let config = match args.preset {
        Preset::Default => GenerationConfig::with_size_range(args.min_size, args.max_size),
        Preset::Baseline => GenerationConfig::baseline_preset(args.min_size, args.max_size),
    };
    config.validate()?;
    emit(&config.to_json())
}
