//! Detection evaluation: greedy IoU matching, VOC all-points average
//! precision, precision/recall/F1 at a confidence cutoff, max-F1 threshold
//! selection and per-category recall of class-agnostic detections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;
use crate::dataset_io::{Detection, GroundTruth, GroundTruthBox};

/// Overlap needed for a detection to count as a hit.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,
    #[error("threshold selection needs at least one detection")]
    NoDetections,
    #[error("prediction references image id {0}, which is not in the ground truth")]
    UnknownImage(u64),
}

/// Intersection over union; 0 when either box is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Detection indices ordered by confidence (descending), then image id,
/// then input position.
pub fn ranking(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.confidence
            .total_cmp(&da.confidence)
            .then(da.image_id.cmp(&db.image_id))
            .then(a.cmp(&b))
    });
    order
}

/// Outcome of matching detections against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Detection indices in ranking order.
    pub order: Vec<usize>,
    /// True positive flag per ranked detection.
    pub flags: Vec<bool>,
    /// Confidence per ranked detection.
    pub confidences: Vec<f64>,
    /// Ground-truth index claimed by each ranked detection.
    pub matched_gt: Vec<Option<usize>>,
    pub gt_count: usize,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn fp_count(&self) -> usize {
        self.flags.len() - self.tp_count()
    }
}

/// Greedy matching in ranking order: a detection claims its best-overlapping
/// unclaimed ground truth in the same image when that IoU reaches
/// `iou_thresh`; otherwise it is a false positive.
pub fn match_detections(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    iou_thresh: f64,
) -> MatchResult {
    let mut by_image: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, gt) in ground_truth.iter().enumerate() {
        by_image.entry(gt.image_id).or_default().push(i);
    }
    let mut claimed = vec![false; ground_truth.len()];
    let order = ranking(detections);
    let mut flags = Vec::with_capacity(order.len());
    let mut matched_gt = Vec::with_capacity(order.len());
    for &d in &order {
        let det = &detections[d];
        let mut best: Option<(usize, f64)> = None;
        for &g in by_image.get(&det.image_id).map(Vec::as_slice).unwrap_or(&[]) {
            if claimed[g] {
                continue;
            }
            let overlap = iou(&det.bbox, &ground_truth[g].bbox);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        match best {
            Some((g, overlap)) if overlap >= iou_thresh => {
                claimed[g] = true;
                flags.push(true);
                matched_gt.push(Some(g));
            }
            _ => {
                flags.push(false);
                matched_gt.push(None);
            }
        }
    }
    MatchResult {
        confidences: order.iter().map(|&d| detections[d].confidence).collect(),
        order,
        flags,
        matched_gt,
        gt_count: ground_truth.len(),
    }
}

/// Raw `(recall, precision)` after each ranked detection.
pub fn pr_curve(m: &MatchResult) -> Vec<(f64, f64)> {
    let g = m.gt_count.max(1) as f64;
    let mut tp = 0usize;
    m.flags
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += hit as usize;
            (tp as f64 / g, tp as f64 / (k + 1) as f64)
        })
        .collect()
}

/// Precision replaced by the best precision at any equal or higher recall.
pub fn precision_envelope(curve: &[(f64, f64)]) -> Vec<f64> {
    let mut env: Vec<f64> = curve.iter().map(|p| p.1).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

/// VOC 2012 all-points AP: exact area under the precision envelope.
///
/// Recall only moves at hits, by `1 / G` each, so the area is the envelope
/// precision summed over the hits and divided by `G`.
pub fn average_precision(m: &MatchResult) -> Result<f64, EvalError> {
    if m.gt_count == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let env = precision_envelope(&pr_curve(m));
    let mut area = 0.0;
    for (&hit, &p) in m.flags.iter().zip(&env) {
        if hit {
            area += p;
        }
    }
    Ok(area / m.gt_count as f64)
}

/// Arithmetic mean of per-category APs (0 for an empty list).
pub fn mean_average_precision(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Counts and rates at one confidence cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub gt_count: usize,
}

impl OperatingPoint {
    /// Zero surviving detections give precision 1; zero ground truth gives
    /// recall 1. F1 is `2TP / (2TP + FP + FN)`.
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, gt_count: usize) -> Self {
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if gt_count == 0 { 1.0 } else { tp as f64 / gt_count as f64 };
        let fn_ = gt_count - tp;
        let f1 = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        Self {
            threshold,
            precision,
            recall,
            f1,
            tp,
            fp,
            gt_count,
        }
    }
}

fn surviving(detections: &[Detection], conf_thresh: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= conf_thresh)
        .copied()
        .collect()
}

/// Precision, recall and F1 over detections with confidence `>= conf_thresh`.
pub fn pr_f1_at(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    conf_thresh: f64,
    iou_thresh: f64,
) -> OperatingPoint {
    let kept = surviving(detections, conf_thresh);
    let m = match_detections(&kept, ground_truth, iou_thresh);
    OperatingPoint::from_counts(conf_thresh, m.tp_count(), m.fp_count(), m.gt_count)
}

/// Confidence cutoff with the highest F1, searched over every distinct
/// confidence; ties go to the higher cutoff.
pub fn select_threshold(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    iou_thresh: f64,
) -> Result<f64, EvalError> {
    if detections.is_empty() {
        return Err(EvalError::NoDetections);
    }
    // Greedy decisions only depend on higher-ranked detections, so the
    // matching under any cutoff is a prefix of the full matching.
    let m = match_detections(detections, ground_truth, iou_thresh);
    let mut best: Option<OperatingPoint> = None;
    let (mut tp, mut fp) = (0, 0);
    for k in 0..m.flags.len() {
        if m.flags[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let at_group_end = k + 1 == m.flags.len() || m.confidences[k + 1] != m.confidences[k];
        if !at_group_end {
            continue;
        }
        let point = OperatingPoint::from_counts(m.confidences[k], tp, fp, m.gt_count);
        if best.is_none_or(|b| point.f1.total_cmp(&b.f1) == Ordering::Greater) {
            best = Some(point);
        }
    }
    Ok(best.expect("at least one detection").threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRecall {
    pub hits: usize,
    pub gt_count: usize,
}

impl CategoryRecall {
    pub fn rate(&self) -> f64 {
        if self.gt_count == 0 {
            0.0
        } else {
            self.hits as f64 / self.gt_count as f64
        }
    }
}

/// Per category, how many ground-truth signs are recovered by a detection
/// with confidence `>= conf_thresh`. Each detection recovers at most one
/// sign, using the same greedy matching as [`match_detections`].
pub fn category_recall(
    detections: &[Detection],
    ground_truth: &[GroundTruthBox],
    conf_thresh: f64,
    iou_thresh: f64,
) -> BTreeMap<u32, CategoryRecall> {
    let mut out: BTreeMap<u32, CategoryRecall> = BTreeMap::new();
    for gt in ground_truth {
        out.entry(gt.category_id)
            .or_insert(CategoryRecall { hits: 0, gt_count: 0 })
            .gt_count += 1;
    }
    let kept = surviving(detections, conf_thresh);
    let m = match_detections(&kept, ground_truth, iou_thresh);
    for g in m.matched_gt.iter().flatten() {
        out.get_mut(&ground_truth[*g].category_id).expect("category seeded").hits += 1;
    }
    out
}

/// Where the operating threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Fixed,
    Validation,
}

/// Full evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub ap: f64,
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub chosen_threshold: f64,
    pub threshold_source: ThresholdSource,
    pub tp: usize,
    pub fp: usize,
    pub gt_count: usize,
    pub detection_count: usize,
    pub per_category_recall: BTreeMap<u32, CategoryRecall>,
    /// `(recall, precision)` after each ranked detection.
    pub pr_curve: Vec<(f64, f64)>,
    /// Detections above the threshold that matched nothing, for review.
    pub false_positives: Vec<Detection>,
}

/// Evaluates class-agnostic detections. mAP equals AP because every sign
/// belongs to the single "traffic sign" class.
pub fn evaluate(
    detections: &[Detection],
    ground_truth: &GroundTruth,
    iou_thresh: f64,
    threshold: f64,
    source: ThresholdSource,
) -> Result<EvalReport, EvalError> {
    if let Some(d) = detections.iter().find(|d| !ground_truth.image_ids.contains(&d.image_id)) {
        return Err(EvalError::UnknownImage(d.image_id));
    }
    let gts = &ground_truth.boxes;
    let full = match_detections(detections, gts, iou_thresh);
    let ap = average_precision(&full)?;
    let point = pr_f1_at(detections, gts, threshold, iou_thresh);
    let kept = surviving(detections, threshold);
    let at_threshold = match_detections(&kept, gts, iou_thresh);
    let false_positives = at_threshold
        .order
        .iter()
        .zip(&at_threshold.flags)
        .filter(|(_, &hit)| !hit)
        .map(|(&i, _)| kept[i])
        .collect();
    Ok(EvalReport {
        iou_threshold: iou_thresh,
        ap,
        map: mean_average_precision(&[ap]),
        precision: point.precision,
        recall: point.recall,
        f1: point.f1,
        chosen_threshold: threshold,
        threshold_source: source,
        tp: point.tp,
        fp: point.fp,
        gt_count: point.gt_count,
        detection_count: detections.len(),
        per_category_recall: category_recall(detections, gts, threshold, iou_thresh),
        pr_curve: pr_curve(&full),
        false_positives,
    })
}

/// `category_id,hits,gt_count,recall` CSV.
pub fn category_recall_csv(per_category: &BTreeMap<u32, CategoryRecall>) -> Vec<u8> {
    let mut out = String::from("category_id,hits,gt_count,recall\n");
    for (id, r) in per_category {
        out.push_str(&format!("{id},{},{},{:.6}\n", r.hits, r.gt_count, r.rate()));
    }
    out.into_bytes()
}
