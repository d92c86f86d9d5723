//! Dataset runs: many samples written to disk with COCO annotations.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GenerationConfig;
use super::plan::{derive_sample_rng, plan_placements};
use super::sample::{synthesize_sample, PlacedSign, SyntheticSample};
use super::SynthError;
use crate::catalog::Catalog;
use crate::corpus::{load_rgb, BackgroundRecord};
use crate::dataset_io::{write_annotations, AnnotationSet};

/// Random access to standardized backgrounds.
pub trait BackgroundProvider: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, index: usize) -> Result<Cow<'_, RgbImage>, SynthError>;
}

impl BackgroundProvider for [BackgroundRecord] {
    fn len(&self) -> usize {
        <[BackgroundRecord]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Cow<'_, RgbImage>, SynthError> {
        Ok(Cow::Borrowed(self[index].raster()))
    }
}

impl BackgroundProvider for Vec<BackgroundRecord> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, RgbImage>, SynthError> {
        <[BackgroundRecord] as BackgroundProvider>::get(self, index)
    }
}

/// Prepared backgrounds on disk, decoded on demand.
#[derive(Debug, Clone)]
pub struct BackgroundDir {
    paths: Vec<PathBuf>,
}

impl BackgroundDir {
    /// Every `.png` in `dir`, in file name order.
    pub fn open(dir: &Path) -> Result<Self, SynthError> {
        let io = |source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl BackgroundProvider for BackgroundDir {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, RgbImage>, SynthError> {
        Ok(Cow::Owned(load_rgb(&self.paths[index])?))
    }
}

/// Generates sample `index` from its own random stream. The background is
/// drawn first, then the placement plan, then the blending pipeline.
pub fn generate_sample<B: BackgroundProvider + ?Sized>(
    config: &GenerationConfig,
    backgrounds: &B,
    catalog: &Catalog,
    index: u64,
) -> Result<SyntheticSample, SynthError> {
    if backgrounds.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    let mut rng = derive_sample_rng(config.master_seed, index);
    let background_index = rng.random_range(0..backgrounds.len());
    let background = backgrounds.get(background_index)?;
    let plan = plan_placements(&mut rng, config, catalog);
    let mut sample = synthesize_sample(&background, &plan, &mut rng, config, catalog)?;
    sample.sample_index = index;
    sample.background_index = background_index;
    Ok(sample)
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub out_dir: PathBuf,
    pub run_id: String,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// Keep samples whose sidecar already exists for the same seed.
    pub resume: bool,
    /// Also write the per-sample coverage mask.
    pub emit_masks: bool,
}

/// Per-sample record written next to each image. Its presence marks the
/// sample as complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSidecar {
    pub sample_index: u64,
    pub master_seed: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub background_index: usize,
    pub background_gain: f64,
    pub background_offset: f64,
    pub blur_sigma: f64,
    pub signs: Vec<PlacedSign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample_index: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generated: u64,
    pub resumed: u64,
    pub annotations: u64,
    pub failures: Vec<SampleFailure>,
}

pub fn image_file_name(run_id: &str, index: u64) -> String {
    format!("{run_id}_{index:06}.png")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    fs::write(path, bytes).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<(), SynthError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| SynthError::Image {
            path: path.to_path_buf(),
            source,
        })
}

struct Layout {
    images: PathBuf,
    sidecars: PathBuf,
    masks: PathBuf,
}

fn load_sidecar(path: &Path, image: &Path, master_seed: u64) -> Option<SampleSidecar> {
    if !image.is_file() {
        return None;
    }
    let sidecar: SampleSidecar = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
    (sidecar.master_seed == master_seed).then_some(sidecar)
}

fn run_one<B: BackgroundProvider + ?Sized>(
    config: &GenerationConfig,
    backgrounds: &B,
    catalog: &Catalog,
    options: &GenerateOptions,
    layout: &Layout,
    index: u64,
) -> Result<(SampleSidecar, bool), SynthError> {
    let file_name = image_file_name(&options.run_id, index);
    let image_path = layout.images.join(&file_name);
    let sidecar_path = layout.sidecars.join(format!("{}_{index:06}.json", options.run_id));
    if options.resume {
        if let Some(sidecar) = load_sidecar(&sidecar_path, &image_path, config.master_seed) {
            return Ok((sidecar, true));
        }
    }
    let sample = generate_sample(config, backgrounds, catalog, index)?;
    save_png(&sample.image, &image_path)?;
    if options.emit_masks {
        save_png(&sample.coverage, &layout.masks.join(&file_name))?;
    }
    let sidecar = SampleSidecar {
        sample_index: index,
        master_seed: config.master_seed,
        file_name,
        width: sample.image.width(),
        height: sample.image.height(),
        background_index: sample.background_index,
        background_gain: sample.background_gain,
        background_offset: sample.background_offset,
        blur_sigma: sample.blur_sigma,
        signs: sample.signs,
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_file(&sidecar_path, &json)?;
    Ok((sidecar, false))
}

/// Generates `config.n_samples` samples into `options.out_dir`:
/// `images/`, `samples/` (sidecars), optional `masks/`, plus
/// `annotations.json` and `annotations.csv`. Image ids equal sample indices.
///
/// Samples that fail are listed in the summary and left out of the
/// annotations; the run itself only errors on setup or final write problems.
pub fn generate_dataset<B: BackgroundProvider + ?Sized>(
    config: &GenerationConfig,
    backgrounds: &B,
    catalog: &Catalog,
    options: &GenerateOptions,
) -> Result<GenerationSummary, SynthError> {
    config.validate()?;
    if backgrounds.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    let layout = Layout {
        images: options.out_dir.join("images"),
        sidecars: options.out_dir.join("samples"),
        masks: options.out_dir.join("masks"),
    };
    let mut dirs = vec![&layout.images, &layout.sidecars];
    if options.emit_masks {
        dirs.push(&layout.masks);
    }
    for dir in dirs {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .expect("thread pool");
    let done = AtomicU64::new(0);
    let n = config.n_samples;
    let step = (n / 20).max(1);
    let outcomes: Vec<_> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|index| {
                let outcome = run_one(config, backgrounds, catalog, options, &layout, index);
                let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
                if finished.is_multiple_of(step) || finished == n {
                    log::info!("generated {finished}/{n}");
                }
                (index, outcome)
            })
            .collect()
    });

    let mut set = AnnotationSet {
        categories: catalog
            .templates()
            .iter()
            .map(|t| crate::dataset_io::CategoryRecord {
                id: t.class_id,
                name: t.name.clone(),
            })
            .collect(),
        ..Default::default()
    };
    let mut summary = GenerationSummary::default();
    for (index, outcome) in outcomes {
        match outcome {
            Ok((sidecar, resumed)) => {
                if resumed {
                    summary.resumed += 1;
                } else {
                    summary.generated += 1;
                }
                set.add_image(index, sidecar.file_name, sidecar.width, sidecar.height);
                for sign in &sidecar.signs {
                    set.add_annotation(index, sign.class_id, sign.bbox);
                }
            }
            Err(e) => {
                log::warn!("sample {index} failed: {e}");
                summary.failures.push(SampleFailure {
                    sample_index: index,
                    reason: e.to_string(),
                });
            }
        }
    }
    summary.annotations = set.annotations.len() as u64;
    let (json, csv) = write_annotations(&set)?;
    write_file(&options.out_dir.join("annotations.json"), &json)?;
    write_file(&options.out_dir.join("annotations.csv"), &csv)?;
    Ok(summary)
}
