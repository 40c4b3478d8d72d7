//! COCO-style box detection metrics.
//!
//! Detections are matched greedily in descending score order (ties: image id,
//! then detection id); each goes to the unmatched truth of its image and
//! category with the highest IoU, if that IoU reaches the threshold. The
//! precision envelope is sampled at recall 0.00, 0.01, ..., 1.00, and AP is
//! the area under that step curve: the mean of the samples at 0.01..=1.00.
//! [`ApRule::CocoMean101`] instead averages all 101 samples, as pycocotools
//! does.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotations::CocoDataset;
use crate::error::{Error, Result};
use crate::order::{Category, PageLayout};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

/// `[x, y, w, h]` boxes.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let ih = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Tie-breaker among equal scores; defaults to the position in the input.
    #[serde(default)]
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
}

impl GroundTruth {
    pub fn from_dataset(ds: &CocoDataset) -> Vec<GroundTruth> {
        ds.annotations
            .iter()
            .map(|a| GroundTruth {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox,
            })
            .collect()
    }
}

/// Reads a COCO results file: a JSON list of detections without ids.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut dets: Vec<Detection> = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    for (i, d) in dets.iter_mut().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::InvalidArgument(format!("detection {i} has score {}", d.score)));
        }
        if !(d.bbox[2] > 0.0 && d.bbox[3] > 0.0) {
            return Err(Error::InvalidArgument(format!("detection {i} has empty bbox {:?}", d.bbox)));
        }
        d.id = i as u64;
    }
    Ok(dets)
}

/// Every ground-truth box as a perfect detection with score 1.
pub fn detections_from_dataset(ds: &CocoDataset) -> Vec<Detection> {
    ds.annotations
        .iter()
        .map(|a| Detection {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox,
            score: 1.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApRule {
    /// Area under the interpolated curve over the 100 recall steps.
    #[default]
    Area,
    /// Mean of all 101 interpolated samples, including recall 0.
    CocoMean101,
}

/// Greedy true/false-positive flags in score order, plus the truth count.
fn match_detections(dets: &[&Detection], truths: &[&GroundTruth], iou_thresh: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<&Detection> = dets.to_vec();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.image_id.cmp(&b.image_id))
            .then(a.id.cmp(&b.id))
    });
    let mut by_image: BTreeMap<u64, Vec<(usize, &GroundTruth)>> = BTreeMap::new();
    for (i, t) in truths.iter().enumerate() {
        by_image.entry(t.image_id).or_default().push((i, t));
    }
    let mut taken = vec![false; truths.len()];
    let mut tp = Vec::with_capacity(order.len());
    for d in order {
        let mut best: Option<(f64, usize)> = None;
        for &(i, t) in by_image.get(&d.image_id).map(Vec::as_slice).unwrap_or(&[]) {
            if taken[i] {
                continue;
            }
            let v = iou(&d.bbox, &t.bbox);
            if v >= iou_thresh && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, i));
            }
        }
        if let Some((_, i)) = best {
            taken[i] = true;
        }
        tp.push(best.is_some());
    }
    (tp, truths.len())
}

/// AP from score-ordered TP flags; `None` without truths.
fn ap_from_matches(tp: &[bool], n_truths: usize, rule: ApRule) -> Option<f64> {
    if n_truths == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_truths as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let sample = |r: f64| {
        // First point whose recall reaches r; the envelope makes it the max to the right.
        let k = recall.partition_point(|&x| x < r - 1e-12);
        precision.get(k).copied().unwrap_or(0.0)
    };
    let points: Vec<f64> = (0..=100).map(|i| sample(i as f64 / 100.0)).collect();
    Some(match rule {
        ApRule::Area => points[1..].iter().sum::<f64>() / 100.0,
        ApRule::CocoMean101 => points.iter().sum::<f64>() / 101.0,
    })
}

pub fn average_precision(
    dets: &[Detection],
    truths: &[GroundTruth],
    category: u32,
    iou_thresh: f64,
) -> Option<f64> {
    average_precision_with(dets, truths, category, iou_thresh, ApRule::Area)
}

pub fn average_precision_with(
    dets: &[Detection],
    truths: &[GroundTruth],
    category: u32,
    iou_thresh: f64,
    rule: ApRule,
) -> Option<f64> {
    let d: Vec<&Detection> = dets.iter().filter(|d| d.category_id == category).collect();
    let t: Vec<&GroundTruth> = truths.iter().filter(|t| t.category_id == category).collect();
    let (tp, n) = match_detections(&d, &t, iou_thresh);
    ap_from_matches(&tp, n, rule)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAp {
    pub category_id: u32,
    /// AP at each of [`iou_thresholds`].
    pub ap: [f64; 10],
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapReport {
    pub categories: Vec<CategoryAp>,
    /// Categories that had detections but no truths; left out of the mean.
    pub excluded: Vec<u32>,
    pub map: f64,
}

/// Mean AP over the ten thresholds, then over categories with truths.
pub fn map_50_95(dets: &[Detection], truths: &[GroundTruth]) -> MapReport {
    map_50_95_with(dets, truths, ApRule::Area)
}

pub fn map_50_95_with(dets: &[Detection], truths: &[GroundTruth], rule: ApRule) -> MapReport {
    let mut ids: Vec<u32> = truths.iter().map(|t| t.category_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut excluded: Vec<u32> = dets
        .iter()
        .map(|d| d.category_id)
        .filter(|c| ids.binary_search(c).is_err())
        .collect();
    excluded.sort_unstable();
    excluded.dedup();
    let categories: Vec<CategoryAp> = ids
        .into_iter()
        .map(|c| {
            let ap = iou_thresholds().map(|t| average_precision_with(dets, truths, c, t, rule).expect("category has truths"));
            CategoryAp {
                category_id: c,
                mean: ap.iter().sum::<f64>() / ap.len() as f64,
                ap,
            }
        })
        .collect();
    let map = if categories.is_empty() {
        0.0
    } else {
        categories.iter().map(|c| c.mean).sum::<f64>() / categories.len() as f64
    };
    MapReport {
        categories,
        excluded,
        map,
    }
}

impl MapReport {
    /// One row per category with AP@0.50, AP@0.75 and AP@[.50:.95], then the
    /// mean and a comment naming excluded categories.
    pub fn to_tsv(&self, name: impl Fn(u32) -> String) -> String {
        let mut out = String::from("category_id\tname\tap50\tap75\tap50_95\n");
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                c.category_id,
                name(c.category_id),
                c.ap[0],
                c.ap[5],
                c.mean
            );
        }
        let _ = writeln!(out, "all\tmean\t-\t-\t{:.4}", self.map);
        if !self.excluded.is_empty() {
            let ids: Vec<String> = self.excluded.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "# excluded without ground truth: {}", ids.join(","));
        }
        out
    }
}

/// Ground-truth elements of `truth` recovered in `found` with the same
/// category and IoU at least `min_iou`, matched one-to-one greedily by IoU.
/// Returns `(recovered, total)`.
pub fn layout_recall(truth: &PageLayout, found: &PageLayout, min_iou: f64) -> (usize, usize) {
    let mut matched = 0;
    for category in Category::ALL {
        let t: Vec<[f64; 4]> = boxes(truth, category);
        let f: Vec<[f64; 4]> = boxes(found, category);
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, a) in t.iter().enumerate() {
            for (j, b) in f.iter().enumerate() {
                let v = iou(a, b);
                if v >= min_iou {
                    pairs.push((v, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut ti, mut fj) = (vec![false; t.len()], vec![false; f.len()]);
        for (_, i, j) in pairs {
            if !ti[i] && !fj[j] {
                ti[i] = true;
                fj[j] = true;
                matched += 1;
            }
        }
    }
    (matched, truth.elements.len())
}

fn boxes(layout: &PageLayout, category: Category) -> Vec<[f64; 4]> {
    layout
        .elements
        .iter()
        .filter(|e| e.category == category)
        .map(|e| [e.rect.x, e.rect.y, e.rect.w, e.rect.h].map(f64::from))
        .collect()
}
