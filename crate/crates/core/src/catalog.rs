//! Sign templates: loading, validation, and the class-indexed catalog.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::imageops::Layer;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("class id {0} appears more than once")]
    DuplicateClass(u32),
    #[error("class ids must be 1..={max}; class {missing} is missing")]
    MissingClass { missing: u32, max: u32 },
    #[error("class ids start at 1, got 0")]
    ZeroClass,
    #[error("template catalog is empty")]
    Empty,
    #[error("template for class {class_id} ({path}) is fully transparent")]
    FullyTransparent { class_id: u32, path: PathBuf },
    #[error("template {0} has no alpha channel and no key colour was given")]
    MissingAlpha(PathBuf),
    #[error("invalid key colour {0:?}, expected RRGGBB hex")]
    KeyColor(String),
    #[error("cannot read template {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("template manifest: {0}")]
    Manifest(#[from] csv::Error),
    #[error("cannot read template manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A class-tagged sign graphic with opacity, kept at native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub class_id: u32,
    pub name: String,
    pub layer: Layer,
}

impl Template {
    pub fn nominal_size(&self) -> u32 {
        self.layer.nominal_size()
    }

    /// Builds a template from a decoded image. A native alpha channel wins;
    /// otherwise pixels exactly equal to `key_color` become transparent.
    pub fn from_image(
        class_id: u32,
        name: impl Into<String>,
        img: &DynamicImage,
        key_color: Option<[u8; 3]>,
        origin: &Path,
    ) -> Result<Self, CatalogError> {
        let (rgb, alpha): (RgbImage, Vec<f32>) = if img.color().has_alpha() {
            let rgba = img.to_rgba8();
            let alpha = rgba.pixels().map(|p| p[3] as f32 / 255.0).collect();
            (img.to_rgb8(), alpha)
        } else if let Some(key) = key_color {
            let rgb = img.to_rgb8();
            let alpha = rgb.pixels().map(|p| if p.0 == key { 0.0 } else { 1.0 }).collect();
            (rgb, alpha)
        } else {
            return Err(CatalogError::MissingAlpha(origin.to_path_buf()));
        };
        let layer = Layer::new(rgb, alpha).expect("alpha built from raster");
        if layer.visible_pixel_count() == 0 {
            return Err(CatalogError::FullyTransparent {
                class_id,
                path: origin.to_path_buf(),
            });
        }
        Ok(Self {
            class_id,
            name: name.into(),
            layer,
        })
    }
}

/// Exactly one template per class, class ids contiguous from 1.
#[derive(Debug, Clone)]
pub struct Catalog {
    templates: Vec<Template>,
}

impl Catalog {
    pub fn from_templates(templates: Vec<Template>) -> Result<Self, CatalogError> {
        if templates.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut by_id = BTreeMap::new();
        for t in templates {
            if t.class_id == 0 {
                return Err(CatalogError::ZeroClass);
            }
            let id = t.class_id;
            if by_id.insert(id, t).is_some() {
                return Err(CatalogError::DuplicateClass(id));
            }
        }
        let max = *by_id.keys().next_back().expect("non-empty");
        if let Some(missing) = (1..=max).find(|id| !by_id.contains_key(id)) {
            return Err(CatalogError::MissingClass { missing, max });
        }
        Ok(Self {
            templates: by_id.into_values().collect(),
        })
    }

    /// Number of classes `M`.
    pub fn class_count(&self) -> u32 {
        self.templates.len() as u32
    }

    pub fn get(&self, class_id: u32) -> Option<&Template> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.templates.get(i as usize))
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Uniform draw over `1..=M`.
    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(1..=self.class_count())
    }
}

/// One line of a template manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: u32,
    pub key_color: Option<[u8; 3]>,
}

pub fn parse_key_color(text: &str) -> Result<[u8; 3], CatalogError> {
    let hex = text.trim().trim_start_matches('#');
    let bad = || CatalogError::KeyColor(text.to_string());
    if hex.len() != 6 || !hex.is_ascii() {
        return Err(bad());
    }
    let mut rgb = [0u8; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(rgb)
}

#[derive(Deserialize)]
struct ManifestRow {
    path: String,
    class_id: u32,
    #[serde(default)]
    key_color: Option<String>,
}

/// Parses a `path,class_id[,key_color]` CSV with a header row. Relative
/// paths are resolved against `base_dir`.
pub fn parse_manifest(bytes: &[u8], base_dir: &Path) -> Result<Vec<ManifestEntry>, CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut entries = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let key_color = match row.key_color.as_deref() {
            None | Some("") => None,
            Some(text) => Some(parse_key_color(text)?),
        };
        entries.push(ManifestEntry {
            path: base_dir.join(row.path),
            class_id: row.class_id,
            key_color,
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CatalogError> {
    let bytes = std::fs::read(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&bytes, path.parent().unwrap_or(Path::new(".")))
}

/// Loads and validates every template named by the manifest.
pub fn load_catalog(entries: &[ManifestEntry]) -> Result<Catalog, CatalogError> {
    let mut seen = std::collections::HashSet::new();
    let mut templates = Vec::with_capacity(entries.len());
    for entry in entries {
        if !seen.insert(entry.class_id) {
            return Err(CatalogError::DuplicateClass(entry.class_id));
        }
        let img = image::open(&entry.path).map_err(|source| CatalogError::Image {
            path: entry.path.clone(),
            source,
        })?;
        let name = entry
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("class_{}", entry.class_id));
        templates.push(Template::from_image(
            entry.class_id,
            name,
            &img,
            entry.key_color,
            &entry.path,
        )?);
    }
    Catalog::from_templates(templates)
}
