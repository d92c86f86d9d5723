//! Background corpus preparation: COCO annotation indexing, exclusion of
//! traffic-related and undersized images, and standardization to square
//! backgrounds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageops::saturate;

/// Side length of every standardized background.
pub const BACKGROUND_SIZE: u32 = 1500;

/// COCO categories whose presence marks an image as traffic-related.
pub const DEFAULT_EXCLUDED_LABELS: [&str; 9] = [
    "traffic light",
    "bicycle",
    "car",
    "motorcycle",
    "bus",
    "truck",
    "fire hydrant",
    "stop sign",
    "parking meter",
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed annotation JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("annotation document does not match the COCO layout: {0}")]
    Schema(String),
    #[error("annotation references unknown image id {0}")]
    UnknownImage(u64),
    #[error("annotation references unknown category id {0}")]
    UnknownCategory(u64),
    #[error("image id {0} is listed more than once")]
    DuplicateImage(u64),
    #[error("image id {id} has invalid size {width}x{height}")]
    InvalidSize { id: u64, width: i64, height: i64 },
    #[error("background {0} must be {BACKGROUND_SIZE}x{BACKGROUND_SIZE}, got {1}x{2}")]
    NotStandardized(String, u32, u32),
    #[error("cannot read {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One image listed in a COCO document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// Images of a COCO document and the category names annotated on each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CocoIndex {
    pub images: Vec<ImageEntry>,
    pub label_map: BTreeMap<u64, BTreeSet<String>>,
}

impl CocoIndex {
    pub fn labels(&self, image_id: u64) -> &BTreeSet<String> {
        static EMPTY: BTreeSet<String> = BTreeSet::new();
        self.label_map.get(&image_id).unwrap_or(&EMPTY)
    }
}

#[derive(Deserialize)]
struct RawDocument {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<RawCategory>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: i64,
    height: i64,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: u64,
    category_id: u64,
}

#[derive(Deserialize)]
struct RawCategory {
    id: u64,
    name: String,
}

pub(crate) fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive(|&b| b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Indexes a COCO annotation document. Segmentation, captions and other
/// payloads are ignored.
pub fn parse_coco_annotations(document: &[u8]) -> Result<CocoIndex, CorpusError> {
    let raw: RawDocument = serde_json::from_slice(document).map_err(|e| {
        if e.is_data() {
            CorpusError::Schema(e.to_string())
        } else {
            CorpusError::Parse {
                offset: byte_offset(document, e.line(), e.column()),
                message: e.to_string(),
            }
        }
    })?;

    let categories: HashMap<u64, String> =
        raw.categories.into_iter().map(|c| (c.id, c.name)).collect();

    let mut index = CocoIndex::default();
    for img in raw.images {
        if img.width <= 0 || img.height <= 0 || img.width > u32::MAX as i64 || img.height > u32::MAX as i64 {
            return Err(CorpusError::InvalidSize {
                id: img.id,
                width: img.width,
                height: img.height,
            });
        }
        if index.label_map.insert(img.id, BTreeSet::new()).is_some() {
            return Err(CorpusError::DuplicateImage(img.id));
        }
        index.images.push(ImageEntry {
            id: img.id,
            file_name: img.file_name,
            width: img.width as u32,
            height: img.height as u32,
        });
    }
    for ann in raw.annotations {
        let name = categories
            .get(&ann.category_id)
            .ok_or(CorpusError::UnknownCategory(ann.category_id))?;
        index
            .label_map
            .get_mut(&ann.image_id)
            .ok_or(CorpusError::UnknownImage(ann.image_id))?
            .insert(name.clone());
    }
    Ok(index)
}

/// Which corpus images may serve as backgrounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExclusionPolicy {
    pub excluded_labels: BTreeSet<String>,
    pub min_width: u32,
    pub min_height: u32,
}

impl Default for ExclusionPolicy {
    fn default() -> Self {
        Self {
            excluded_labels: DEFAULT_EXCLUDED_LABELS.iter().map(|s| s.to_string()).collect(),
            min_width: 400,
            min_height: 600,
        }
    }
}

/// Why an image was not accepted as a background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    ExcludedLabel(String),
    TooNarrow { width: u32, min: u32 },
    TooShort { height: u32, min: u32 },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::ExcludedLabel(label) => write!(f, "excluded label: {label}"),
            Rejection::TooNarrow { width, min } => write!(f, "width {width} < {min}"),
            Rejection::TooShort { height, min } => write!(f, "height {height} < {min}"),
        }
    }
}

impl ExclusionPolicy {
    pub fn verdict(&self, entry: &ImageEntry, labels: &BTreeSet<String>) -> Result<(), Rejection> {
        if let Some(label) = labels.iter().find(|l| self.excluded_labels.contains(*l)) {
            return Err(Rejection::ExcludedLabel(label.clone()));
        }
        if entry.width < self.min_width {
            return Err(Rejection::TooNarrow {
                width: entry.width,
                min: self.min_width,
            });
        }
        if entry.height < self.min_height {
            return Err(Rejection::TooShort {
                height: entry.height,
                min: self.min_height,
            });
        }
        Ok(())
    }
}

/// Ids of accepted images, in document order.
pub fn filter_backgrounds(index: &CocoIndex, policy: &ExclusionPolicy) -> Vec<u64> {
    index
        .images
        .iter()
        .filter(|img| policy.verdict(img, index.labels(img.id)).is_ok())
        .map(|img| img.id)
        .collect()
}

/// Scales uniformly so the short side equals `target` (bilinear,
/// clamp-to-edge), then crops the central `target` x `target` square. When
/// the leftover is odd the extra pixel is dropped on the trailing side.
pub fn standardize_background(raster: &RgbImage, target: u32) -> RgbImage {
    let (w, h) = raster.dimensions();
    assert!(w > 0 && h > 0 && target > 0, "empty raster");
    let short = w.min(h);
    if short == target {
        let (ox, oy) = ((w - target) / 2, (h - target) / 2);
        return image::imageops::crop_imm(raster, ox, oy, target, target).to_image();
    }

    let s = target as f64 / short as f64;
    let scaled = |len: u32| if len == short { target } else { ((len as f64 * s).round() as u32).max(target) };
    let (ox, oy) = ((scaled(w) - target) / 2, (scaled(h) - target) / 2);

    // Source sample positions and weights, shared by every row / column.
    let taps = |offset: u32, len: u32| -> Vec<(u32, u32, f32)> {
        (0..target)
            .map(|i| {
                let f = ((i + offset) as f64 + 0.5) / s - 0.5;
                let f = f.clamp(0.0, (len - 1) as f64);
                let i0 = f.floor() as u32;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, (f - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(ox, w);
    let ys = taps(oy, h);

    let mut out = RgbImage::new(target, target);
    for (oy_i, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox_i, &(x0, x1, tx)) in xs.iter().enumerate() {
            let p00 = raster.get_pixel(x0, y0);
            let p10 = raster.get_pixel(x1, y0);
            let p01 = raster.get_pixel(x0, y1);
            let p11 = raster.get_pixel(x1, y1);
            let dst = out.get_pixel_mut(ox_i as u32, oy_i as u32);
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - tx) + p10[c] as f32 * tx;
                let bottom = p01[c] as f32 * (1.0 - tx) + p11[c] as f32 * tx;
                dst[c] = saturate(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// A standardized background raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundRecord {
    pub source_id: String,
    raster: RgbImage,
}

impl BackgroundRecord {
    pub fn new(source_id: impl Into<String>, raster: RgbImage) -> Result<Self, CorpusError> {
        let source_id = source_id.into();
        let (w, h) = raster.dimensions();
        if w != BACKGROUND_SIZE || h != BACKGROUND_SIZE {
            return Err(CorpusError::NotStandardized(source_id, w, h));
        }
        Ok(Self { source_id, raster })
    }

    /// Standardizes an arbitrary raster into a record.
    pub fn from_raster(source_id: impl Into<String>, raster: &RgbImage) -> Self {
        Self {
            source_id: source_id.into(),
            raster: standardize_background(raster, BACKGROUND_SIZE),
        }
    }

    pub fn raster(&self) -> &RgbImage {
        &self.raster
    }
}

/// Decodes a PNG or JPEG file into 8-bit RGB, promoting grayscale and
/// paletted images.
pub fn load_rgb(path: &Path) -> Result<RgbImage, CorpusError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| CorpusError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// One row of the preparation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareRecord {
    pub source_id: String,
    pub original_w: u32,
    pub original_h: u32,
    pub accepted_flag: bool,
    pub rejection_reason: String,
}

pub fn write_prepare_manifest(records: &[PrepareRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in records {
        writer.serialize(record)?;
    }
    writer.into_inner().map_err(|e| e.into_error().into())
}

pub fn read_prepare_manifest(bytes: &[u8]) -> Result<Vec<PrepareRecord>, csv::Error> {
    csv::Reader::from_reader(bytes).deserialize().collect()
}

/// Result of a preparation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    /// One row per indexed image, in document order.
    pub records: Vec<PrepareRecord>,
    pub accepted: usize,
    /// Images that passed the filter but could not be decoded.
    pub unreadable: usize,
}

/// Background file name for a COCO image id.
pub fn background_source_id(image_id: u64) -> String {
    format!("{image_id:012}")
}

/// Filters the indexed images and writes each survivor, standardized, to
/// `out_dir/<source_id>.png`. Undecodable images are recorded as rejected
/// with the decoder message; failing to write output is an error.
pub fn prepare_corpus(
    index: &CocoIndex,
    policy: &ExclusionPolicy,
    corpus_dir: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<PrepareSummary, CorpusError> {
    std::fs::create_dir_all(out_dir).map_err(|source| CorpusError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let results: Vec<Result<(PrepareRecord, bool), CorpusError>> = pool.install(|| {
        index
            .images
            .par_iter()
            .map(|img| {
                let mut record = PrepareRecord {
                    source_id: background_source_id(img.id),
                    original_w: img.width,
                    original_h: img.height,
                    accepted_flag: false,
                    rejection_reason: String::new(),
                };
                if let Err(rejection) = policy.verdict(img, index.labels(img.id)) {
                    record.rejection_reason = rejection.to_string();
                    return Ok((record, false));
                }
                let raster = match load_rgb(&corpus_dir.join(&img.file_name)) {
                    Ok(raster) => raster,
                    Err(e) => {
                        log::warn!("{e}");
                        record.rejection_reason = format!("unreadable: {e}");
                        return Ok((record, true));
                    }
                };
                let path = out_dir.join(format!("{}.png", record.source_id));
                standardize_background(&raster, BACKGROUND_SIZE)
                    .save_with_format(&path, image::ImageFormat::Png)
                    .map_err(|source| CorpusError::Image { path, source })?;
                record.accepted_flag = true;
                Ok((record, false))
            })
            .collect()
    });
    let mut summary = PrepareSummary {
        records: Vec::with_capacity(results.len()),
        accepted: 0,
        unreadable: 0,
    };
    for result in results {
        let (record, unreadable) = result?;
        summary.accepted += record.accepted_flag as usize;
        summary.unreadable += unreadable as usize;
        summary.records.push(record);
    }
    Ok(summary)
}
