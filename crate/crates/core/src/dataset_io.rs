//! Annotation and prediction file formats.
//!
//! Boxes are COCO `[x, y, w, h]` in absolute pixels everywhere. Written
//! pixel coordinates are integers; written confidences carry six decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::{BBox, PixelBox};
use crate::corpus::byte_offset;

#[derive(Debug, Error)]
pub enum DatasetIoError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("gt.txt line {line}: {reason}")]
    Gtsdb { line: usize, reason: String },
    #[error("annotation {annotation} references unknown image id {image_id}")]
    UnknownImage { annotation: u64, image_id: u64 },
}

fn json_error(bytes: &[u8], e: serde_json::Error) -> DatasetIoError {
    DatasetIoError::Json {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [u32; 4],
    pub area: u64,
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub id: u32,
    pub name: String,
}

/// A COCO detection annotation document with integer boxes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<CategoryRecord>,
}

impl AnnotationSet {
    pub fn add_image(&mut self, id: u64, file_name: impl Into<String>, width: u32, height: u32) {
        self.images.push(ImageRecord {
            id,
            file_name: file_name.into(),
            width,
            height,
        });
    }

    /// Appends an annotation with the next sequential id (starting at 1).
    pub fn add_annotation(&mut self, image_id: u64, category_id: u32, bbox: PixelBox) {
        let id = self.annotations.len() as u64 + 1;
        self.annotations.push(AnnotationRecord {
            id,
            image_id,
            category_id,
            bbox: bbox.as_array(),
            area: bbox.area(),
            iscrowd: 0,
        });
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            image_ids: self.images.iter().map(|i| i.id).collect(),
            boxes: self
                .annotations
                .iter()
                .map(|a| GroundTruthBox {
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: BBox::new(
                        a.bbox[0] as f64,
                        a.bbox[1] as f64,
                        a.bbox[2] as f64,
                        a.bbox[3] as f64,
                    ),
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct CsvAnnotation<'a> {
    file_name: &'a str,
    class_id: u32,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
}

/// Serializes the set as pretty COCO JSON plus a flat
/// `file_name,class_id,x,y,w,h` CSV mirror.
pub fn write_annotations(set: &AnnotationSet) -> Result<(Vec<u8>, Vec<u8>), DatasetIoError> {
    let mut json = serde_json::to_vec_pretty(set).expect("plain data serializes");
    json.push(b'\n');

    let names: BTreeMap<u64, &str> = set.images.iter().map(|i| (i.id, i.file_name.as_str())).collect();
    let mut csv = csv::Writer::from_writer(Vec::new());
    for a in &set.annotations {
        let file_name = names.get(&a.image_id).ok_or(DatasetIoError::UnknownImage {
            annotation: a.id,
            image_id: a.image_id,
        })?;
        csv.serialize(CsvAnnotation {
            file_name,
            class_id: a.category_id,
            x: a.bbox[0],
            y: a.bbox[1],
            w: a.bbox[2],
            h: a.bbox[3],
        })?;
    }
    // Headers are only written with the first record.
    if set.annotations.is_empty() {
        csv.write_record(["file_name", "class_id", "x", "y", "w", "h"])?;
    }
    let csv = csv.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok((json, csv))
}

/// Parses a document produced by [`write_annotations`].
pub fn read_annotations(bytes: &[u8]) -> Result<AnnotationSet, DatasetIoError> {
    let set: AnnotationSet = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, e))?;
    let ids: BTreeSet<u64> = set.images.iter().map(|i| i.id).collect();
    for (index, a) in set.annotations.iter().enumerate() {
        if !ids.contains(&a.image_id) {
            return Err(DatasetIoError::UnknownImage {
                annotation: a.id,
                image_id: a.image_id,
            });
        }
        if a.bbox[2] == 0 || a.bbox[3] == 0 {
            return Err(DatasetIoError::Invalid {
                index,
                reason: format!("empty box {:?}", a.bbox),
            });
        }
    }
    Ok(set)
}

/// An annotated ground-truth sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: u64,
    pub bbox: BBox,
    pub category_id: u32,
}

/// Ground truth for an evaluation split: all known image ids (including
/// images without signs) and their boxes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub image_ids: BTreeSet<u64>,
    pub boxes: Vec<GroundTruthBox>,
}

#[derive(Deserialize)]
struct LooseDocument {
    images: Vec<LooseImage>,
    annotations: Vec<LooseAnnotation>,
}

#[derive(Deserialize)]
struct LooseImage {
    id: u64,
}

#[derive(Deserialize)]
struct LooseAnnotation {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
}

/// Reads ground truth from any COCO annotation document; real-valued boxes
/// and extra fields are accepted.
pub fn read_ground_truth(bytes: &[u8]) -> Result<GroundTruth, DatasetIoError> {
    let doc: LooseDocument = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, e))?;
    let image_ids: BTreeSet<u64> = doc.images.iter().map(|i| i.id).collect();
    let mut boxes = Vec::with_capacity(doc.annotations.len());
    for (index, a) in doc.annotations.into_iter().enumerate() {
        if !image_ids.contains(&a.image_id) {
            return Err(DatasetIoError::UnknownImage {
                annotation: index as u64,
                image_id: a.image_id,
            });
        }
        let bbox = validate_box(index, a.bbox)?;
        boxes.push(GroundTruthBox {
            image_id: a.image_id,
            bbox,
            category_id: a.category_id,
        });
    }
    Ok(GroundTruth { image_ids, boxes })
}

/// A class-agnostic detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBox,
    pub confidence: f64,
}

fn validate_box(index: usize, b: [f64; 4]) -> Result<BBox, DatasetIoError> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(DatasetIoError::Invalid {
            index,
            reason: format!("non-finite box {b:?}"),
        });
    }
    if b[2] <= 0.0 || b[3] <= 0.0 {
        return Err(DatasetIoError::Invalid {
            index,
            reason: format!("box size must be positive, got {}x{}", b[2], b[3]),
        });
    }
    Ok(BBox::new(b[0], b[1], b[2], b[3]))
}

fn validate_detection(index: usize, image_id: u64, b: [f64; 4], score: f64) -> Result<Detection, DatasetIoError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(DatasetIoError::Invalid {
            index,
            reason: format!("confidence {score} outside [0, 1]"),
        });
    }
    Ok(Detection {
        image_id,
        bbox: validate_box(index, b)?,
        confidence: score,
    })
}

#[derive(Deserialize)]
struct ResultRecord {
    image_id: u64,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Deserialize)]
struct CsvPrediction {
    image_id: u64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
}

/// Reads detections from a COCO results array (`[{image_id, bbox, score}]`)
/// or from the `image_id,x,y,w,h,score` CSV equivalent. Input order is kept.
pub fn read_predictions(bytes: &[u8]) -> Result<Vec<Detection>, DatasetIoError> {
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    if first == Some(&b'[') {
        let records: Vec<ResultRecord> = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, e))?;
        records
            .into_iter()
            .enumerate()
            .map(|(i, r)| validate_detection(i, r.image_id, r.bbox, r.score))
            .collect()
    } else if first.is_none() {
        Ok(Vec::new())
    } else {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        reader
            .deserialize::<CsvPrediction>()
            .enumerate()
            .map(|(i, row)| {
                let r = row?;
                validate_detection(i, r.image_id, [r.x, r.y, r.w, r.h], r.score)
            })
            .collect()
    }
}

fn push_number(out: &mut String, v: f64) {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(out, "{}", v as i64).unwrap();
    } else {
        write!(out, "{v}").unwrap();
    }
}

/// Writes detections as a COCO results array, one record per line.
pub fn write_predictions(detections: &[Detection]) -> Vec<u8> {
    let mut out = String::from("[");
    for (i, d) in detections.iter().enumerate() {
        out.push_str(if i == 0 { "\n  " } else { ",\n  " });
        write!(out, "{{\"image_id\":{},\"bbox\":[", d.image_id).unwrap();
        for (k, v) in d.bbox.as_array().into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            push_number(&mut out, v);
        }
        write!(out, "],\"score\":{:.6}}}", d.confidence).unwrap();
    }
    if !detections.is_empty() {
        out.push('\n');
    }
    out.push_str("]\n");
    out.into_bytes()
}

/// One line of a GTSDB `gt.txt` file, with inclusive corner coordinates
/// already converted to `[x, y, w, h]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtsdbRecord {
    pub file_name: String,
    pub bbox: PixelBox,
    pub class_id: u32,
}

/// Parses `file;x1;y1;x2;y2;class` lines. Corners are inclusive pixel
/// indices, so width is `x2 - x1 + 1`.
pub fn parse_gtsdb_gt(text: &str) -> Result<Vec<GtsdbRecord>, DatasetIoError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| DatasetIoError::Gtsdb { line: line_no, reason };
        let fields: Vec<&str> = line.split(';').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        }
        let mut nums = [0u32; 5];
        for (slot, text) in nums.iter_mut().zip(&fields[1..]) {
            *slot = text.parse().map_err(|_| err(format!("not a non-negative integer: {text:?}")))?;
        }
        let [x1, y1, x2, y2, class_id] = nums;
        if x2 < x1 || y2 < y1 {
            return Err(err(format!("inverted corners ({x1},{y1})-({x2},{y2})")));
        }
        records.push(GtsdbRecord {
            file_name: fields[0].to_string(),
            bbox: PixelBox::new(x1, y1, x2 - x1 + 1, y2 - y1 + 1),
            class_id,
        });
    }
    Ok(records)
}

/// Number of GTSDB sign classes (native ids 0..=42).
pub const GTSDB_CLASSES: u32 = 43;

/// Converts GTSDB records to a COCO set. Image ids are the numeric file
/// stems (`00042.ppm` -> 42) and category ids are the native class plus one.
pub fn gtsdb_to_annotation_set(
    records: &[GtsdbRecord],
    width: u32,
    height: u32,
) -> Result<AnnotationSet, DatasetIoError> {
    let mut set = AnnotationSet::default();
    let mut images: BTreeMap<u64, &str> = BTreeMap::new();
    let mut ids = Vec::with_capacity(records.len());
    for (index, r) in records.iter().enumerate() {
        let stem = r.file_name.rsplit_once('.').map_or(r.file_name.as_str(), |(s, _)| s);
        let id: u64 = stem.parse().map_err(|_| DatasetIoError::Invalid {
            index,
            reason: format!("file name {:?} has no numeric stem", r.file_name),
        })?;
        if r.class_id >= GTSDB_CLASSES {
            return Err(DatasetIoError::Invalid {
                index,
                reason: format!("class {} outside 0..{GTSDB_CLASSES}", r.class_id),
            });
        }
        images.entry(id).or_insert(&r.file_name);
        ids.push(id);
    }
    for (&id, name) in &images {
        set.add_image(id, *name, width, height);
    }
    for (r, id) in records.iter().zip(ids) {
        set.add_annotation(id, r.class_id + 1, r.bbox);
    }
    set.categories = (0..GTSDB_CLASSES)
        .map(|c| CategoryRecord {
            id: c + 1,
            name: format!("gtsdb_{c}"),
        })
        .collect();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_set_is_valid_document() {
        let (json, csv) = write_annotations(&AnnotationSet::default()).unwrap();
        let back = read_annotations(&json).unwrap();
        assert!(back.images.is_empty() && back.annotations.is_empty() && back.categories.is_empty());
        assert_eq!(csv, b"file_name,class_id,x,y,w,h\n");
    }

    #[test]
    fn two_signs_one_image() {
        let mut set = AnnotationSet::default();
        set.add_image(0, "run_000000.png", 1500, 1500);
        set.add_annotation(0, 3, PixelBox::new(10, 20, 30, 40));
        set.add_annotation(0, 1, PixelBox::new(100, 20, 30, 40));
        set.categories.push(CategoryRecord { id: 1, name: "a".into() });
        let (json, csv) = write_annotations(&set).unwrap();
        let back = read_annotations(&json).unwrap();
        assert_eq!(back.annotations.len(), 2);
        assert!(back.annotations.iter().all(|a| a.image_id == 0));
        assert_eq!(back, set);
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(
            text,
            "file_name,class_id,x,y,w,h\nrun_000000.png,3,10,20,30,40\nrun_000000.png,1,100,20,30,40\n"
        );
        // Pixel coordinates are written as integers.
        assert!(String::from_utf8(json).unwrap().contains("\"bbox\": [\n        10,"));
    }

    #[test]
    fn annotation_integrity() {
        let doc = br#"{"images":[],"annotations":[{"id":1,"image_id":4,"category_id":1,"bbox":[0,0,1,1],"area":1,"iscrowd":0}],"categories":[]}"#;
        assert!(matches!(
            read_annotations(doc),
            Err(DatasetIoError::UnknownImage { image_id: 4, .. })
        ));
    }

    #[test]
    fn prediction_examples() {
        assert!(read_predictions(b"[]").unwrap().is_empty());
        assert!(read_predictions(b"  \n").unwrap().is_empty());
        let dets = read_predictions(br#"[{"image_id":3,"bbox":[10,20,30,40],"score":0.93,"category_id":1}]"#).unwrap();
        assert_eq!(
            dets,
            vec![Detection {
                image_id: 3,
                bbox: BBox::new(10.0, 20.0, 30.0, 40.0),
                confidence: 0.93
            }]
        );
        let csv = read_predictions(b"image_id,x,y,w,h,score\n3,10,20,30,40,0.93\n").unwrap();
        assert_eq!(csv, dets);
    }

    #[test]
    fn prediction_validation() {
        let bad_score = br#"[{"image_id":1,"bbox":[0,0,5,5],"score":1.2}]"#;
        assert!(matches!(read_predictions(bad_score), Err(DatasetIoError::Invalid { index: 0, .. })));
        let bad_size = br#"[{"image_id":1,"bbox":[0,0,5,5],"score":0.2},{"image_id":1,"bbox":[0,0,-5,5],"score":0.2}]"#;
        assert!(matches!(read_predictions(bad_size), Err(DatasetIoError::Invalid { index: 1, .. })));
        assert!(matches!(read_predictions(b"[{\"image_id\":1,"), Err(DatasetIoError::Json { .. })));
    }

    #[test]
    fn prediction_writer_format() {
        let dets = vec![
            Detection { image_id: 1, bbox: BBox::new(10.0, 20.5, 30.0, 40.0), confidence: 0.93 },
            Detection { image_id: 2, bbox: BBox::new(0.0, 0.0, 1.0, 1.0), confidence: 1.0 },
        ];
        let text = String::from_utf8(write_predictions(&dets)).unwrap();
        assert_eq!(
            text,
            "[\n  {\"image_id\":1,\"bbox\":[10,20.5,30,40],\"score\":0.930000},\n  {\"image_id\":2,\"bbox\":[0,0,1,1],\"score\":1.000000}\n]\n"
        );
        assert_eq!(read_predictions(text.as_bytes()).unwrap(), dets);
        assert_eq!(write_predictions(&[]), b"[]\n");
    }

    #[test]
    fn gtsdb_import() {
        let text = "00000.ppm;774;411;815;446;11\n00001.ppm;983;388;1024;432;40\n00000.ppm;386;494;442;552;38\n";
        let records = parse_gtsdb_gt(text).unwrap();
        assert_eq!(records[0].bbox, PixelBox::new(774, 411, 42, 36));
        let set = gtsdb_to_annotation_set(&records, 1360, 800).unwrap();
        assert_eq!(set.images.len(), 2);
        assert_eq!(set.images[1].id, 1);
        assert_eq!(set.annotations[1].category_id, 41);
        assert_eq!(set.annotations[2].image_id, 0);
        assert_eq!(set.categories.len(), 43);

        assert!(matches!(parse_gtsdb_gt("a.ppm;1;2;3\n"), Err(DatasetIoError::Gtsdb { line: 1, .. })));
        assert!(matches!(parse_gtsdb_gt("\na.ppm;5;2;3;4;1\n"), Err(DatasetIoError::Gtsdb { line: 2, .. })));
    }

    #[test]
    fn loose_ground_truth_accepts_float_boxes() {
        let doc = br#"{"images":[{"id":1,"width":5},{"id":2}],"annotations":[{"image_id":1,"category_id":2,"bbox":[1.5,2,3,4],"segmentation":[]}]}"#;
        let gt = read_ground_truth(doc).unwrap();
        assert_eq!(gt.image_ids.len(), 2);
        assert_eq!(gt.boxes[0].bbox, BBox::new(1.5, 2.0, 3.0, 4.0));
    }
}
