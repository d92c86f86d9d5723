#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use serde_json::json;

pub fn signforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signforge"))
        .args(args)
        .env("SIGNFORGE_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// One corpus image: id, width, height and annotated category names.
pub struct CorpusImage<'a> {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub labels: &'a [&'a str],
}

fn texture(id: u64, w: u32, h: u32) -> RgbImage {
    let k = id as u32;
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(31 + k) ^ y.wrapping_mul(17 + 3 * k);
        Rgb([(v % 251) as u8, ((x + y + 40 * k) % 256) as u8, ((x * y / 7 + k * 13) % 256) as u8])
    })
}

/// Writes the images as PNG and a matching COCO annotation file; returns
/// the annotation path.
pub fn write_corpus(dir: &Path, images: &[CorpusImage]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut names: Vec<&str> = images.iter().flat_map(|i| i.labels.iter().copied()).collect();
    names.sort();
    names.dedup();
    let category_id = |n: &str| names.iter().position(|m| *m == n).unwrap() as u64 + 1;
    let mut anns = Vec::new();
    for img in images {
        texture(img.id, img.width, img.height)
            .save(dir.join(format!("img_{}.png", img.id)))
            .unwrap();
        for label in img.labels {
            anns.push(json!({"id": anns.len() + 1, "image_id": img.id, "category_id": category_id(label), "bbox": [0, 0, 10, 10]}));
        }
    }
    let doc = json!({
        "images": images.iter().map(|i| json!({"id": i.id, "file_name": format!("img_{}.png", i.id), "width": i.width, "height": i.height})).collect::<Vec<_>>(),
        "annotations": anns,
        "categories": names.iter().map(|n| json!({"id": category_id(n), "name": n})).collect::<Vec<_>>(),
    });
    let path = dir.join("annotations.json");
    fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path
}

/// `count` plain images large enough to pass the default size filter.
pub fn plain_corpus(count: u64) -> Vec<CorpusImage<'static>> {
    (1..=count)
        .map(|id| CorpusImage {
            id,
            width: 400 + (id as u32 % 5) * 60,
            height: 600 + (id as u32 % 3) * 50,
            labels: if id % 2 == 0 { &["dog"] } else { &[] },
        })
        .collect()
}

fn inside(shape: u32, n: u32, x: u32, y: u32) -> bool {
    let c = n as f64 / 2.0;
    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
    match shape {
        0 => (fx - c).hypot(fy - c) <= c - 1.0,
        // Upward triangle.
        1 => fy >= 2.0 && fy <= n as f64 - 2.0 && (fx - c).abs() <= (fy - 2.0) / 2.0 * 1.1,
        _ => (fx - c).abs() + (fy - c).abs() <= c - 1.0,
    }
}

/// Writes `classes` shape templates (alternating native alpha and a
/// magenta key) plus their manifest; returns the manifest path.
pub fn write_templates(dir: &Path, classes: u32) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut manifest = String::from("path,class_id,key_color\n");
    for c in 1..=classes {
        let n = 48 + (c * 7) % 64;
        let shape = c % 3;
        let colour = |x: u32, y: u32| [(40 + c * 5) as u8, ((x * 3 + c * 11) % 200) as u8, ((y * 2 + 30) % 200) as u8];
        let name = format!("class_{c:02}.png");
        if c % 2 == 0 {
            RgbaImage::from_fn(n, n, |x, y| {
                let [r, g, b] = colour(x, y);
                Rgba([r, g, b, if inside(shape, n, x, y) { 255 } else { 0 }])
            })
            .save(dir.join(&name))
            .unwrap();
            manifest.push_str(&format!("{name},{c},\n"));
        } else {
            RgbImage::from_fn(n, n, |x, y| if inside(shape, n, x, y) { Rgb(colour(x, y)) } else { Rgb([255, 0, 255]) })
                .save(dir.join(&name))
                .unwrap();
            manifest.push_str(&format!("{name},{c},FF00FF\n"));
        }
    }
    let path = dir.join("templates.csv");
    fs::write(&path, manifest).unwrap();
    path
}

pub fn write_config(path: &Path, min_size: u32, max_size: u32) {
    let text = format!("{{\n  \"size_range\": [{min_size}, {max_size}]\n}}\n");
    fs::write(path, text).unwrap();
}

/// Every file under `dir` keyed by its relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
