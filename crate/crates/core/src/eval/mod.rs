//! Class-agnostic COCO-style evaluation of instance masks.
//!
//! Matching and accumulation follow `pycocotools` with a single category,
//! no crowd regions, the "all" area range and at most 100 detections per
//! image: greedy score-ordered matching per IoU threshold, a global
//! precision/recall curve, and 101-point interpolated AP.

pub mod rle;
mod schema;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::exec::Execution;
use crate::mask::BinaryMask;

pub use rle::{rle_decode, rle_encode, RleMask};
pub use schema::{ImageMasks, MaskEntry, MaskFile};

pub const MAX_DETS: usize = 100;
const NUM_IOU_THRESHOLDS: usize = 10;
const NUM_RECALL_THRESHOLDS: usize = 101;

/// `numpy.linspace` with endpoint, reproduced bit for bit.
fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    linspace(0.5, 0.95, NUM_IOU_THRESHOLDS)
}

fn recall_thresholds() -> Vec<f64> {
    linspace(0.0, 1.0, NUM_RECALL_THRESHOLDS)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Mask,
    Box,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub mask: RleMask,
    pub score: f64,
    pub image_id: String,
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Tight box in `(x, y, w, h)` pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxXywh {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BoxXywh {
    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

pub fn box_from_mask(mask: &BinaryMask) -> Result<BoxXywh> {
    let width = mask.width();
    let mut ones = mask.iter_ones();
    let first = ones.next().ok_or(Error::EmptyMask)?;
    let (mut r0, mut c0) = (first / width, first % width);
    let (mut r1, mut c1) = (r0, c0);
    for idx in ones {
        let (r, c) = (idx / width, idx % width);
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    Ok(BoxXywh {
        x: c0,
        y: r0,
        w: c1 - c0 + 1,
        h: r1 - r0 + 1,
    })
}

pub fn box_iou(a: &BoxXywh, b: &BoxXywh) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let ih = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Processing order for detections: score descending, then larger area,
/// then input index.
fn detection_order(scores: &[f64], areas: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(areas[b].cmp(&areas[a]))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching of score-ordered detections (rows of `ious`) to ground
/// truth (columns). Among unmatched ground truths with IoU at or above the
/// threshold, the highest IoU wins; on exact ties the later ground truth
/// wins, as in `pycocotools`.
fn greedy_match(ious: &[Vec<f64>], num_gt: usize, threshold: f64) -> Vec<Option<usize>> {
    let mut gt_taken = vec![false; num_gt];
    ious.iter()
        .map(|row| {
            let mut best_iou = threshold.min(1.0 - 1e-10);
            let mut best = None;
            for (g, &iou) in row.iter().enumerate() {
                if gt_taken[g] || iou < best_iou {
                    continue;
                }
                best_iou = iou;
                best = Some(g);
            }
            if let Some(g) = best {
                gt_taken[g] = true;
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// Detection indices in the order they were matched.
    pub order: Vec<usize>,
    /// Matched ground-truth index per detection (input indexing).
    pub det_to_gt: Vec<Option<usize>>,
    pub gt_to_det: Vec<Option<usize>>,
}

pub fn match_detections(dets: &[Detection], gts: &[RleMask], iou_thresh: f64) -> Result<Matching> {
    let gt_masks = gts.iter().map(rle_decode).collect::<Result<Vec<_>>>()?;
    let det_masks = dets.iter().map(|d| rle_decode(&d.mask)).collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let areas: Vec<usize> = det_masks.iter().map(|m| m.area()).collect();
    let order = detection_order(&scores, &areas);
    let ious = order
        .iter()
        .map(|&d| gt_masks.iter().map(|g| mask_iou(&det_masks[d], g)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let matched = greedy_match(&ious, gts.len(), iou_thresh);
    let mut det_to_gt = vec![None; dets.len()];
    let mut gt_to_det = vec![None; gts.len()];
    for (&d, m) in order.iter().zip(matched) {
        if let Some(g) = m {
            det_to_gt[d] = Some(g);
            gt_to_det[g] = Some(d);
        }
    }
    Ok(Matching {
        order,
        det_to_gt,
        gt_to_det,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMatchRecord {
    pub image_id: String,
    pub num_gt: usize,
    pub num_dets: usize,
    /// Ground-truth index matched at IoU 0.5, per input detection.
    pub matches_at_50: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_type: IouKind,
    pub ap: f64,
    pub ap50: f64,
    pub ar100: f64,
    pub iou_thresholds: Vec<f64>,
    pub per_threshold_ap: Vec<f64>,
    pub per_threshold_recall: Vec<f64>,
    pub num_images: usize,
    pub num_gt: usize,
    pub num_dets: usize,
    /// Set when there is no ground truth; metrics are then reported as 0.
    pub no_ground_truth: bool,
    pub images: Vec<ImageMatchRecord>,
}

struct ImageEval {
    record: ImageMatchRecord,
    /// Scores of the kept detections, in processing order.
    scores: Vec<f64>,
    /// `tp[t][k]`: whether the k-th kept detection matched at threshold t.
    tp: Vec<Vec<bool>>,
}

fn evaluate_image(
    image_id: &str,
    dims: (usize, usize),
    gt: Option<&ImageMasks>,
    pred: Option<&ImageMasks>,
    kind: IouKind,
    thresholds: &[f64],
) -> Result<ImageEval> {
    let decode_all = |im: Option<&ImageMasks>| -> Result<Vec<BinaryMask>> {
        match im {
            None => Ok(Vec::new()),
            Some(im) => {
                check_dims(dims, (im.height, im.width))?;
                (0..im.masks.len()).map(|i| rle_decode(&im.rle(i)?)).collect()
            }
        }
    };
    let gt_masks = decode_all(gt)?;
    let det_masks = decode_all(pred)?;
    let scores: Vec<f64> = match pred {
        None => Vec::new(),
        Some(p) => p.masks.iter().map(|m| m.score.unwrap_or(1.0)).collect(),
    };
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("non-finite detection score {bad}")));
    }
    let areas: Vec<usize> = det_masks.iter().map(|m| m.area()).collect();
    let mut order = detection_order(&scores, &areas);
    order.truncate(MAX_DETS);

    let ious: Vec<Vec<f64>> = match kind {
        IouKind::Mask => order
            .iter()
            .map(|&d| gt_masks.iter().map(|g| mask_iou(&det_masks[d], g)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
        IouKind::Box => {
            let boxes = |ms: &[BinaryMask]| -> Vec<Option<BoxXywh>> { ms.iter().map(|m| box_from_mask(m).ok()).collect() };
            let (gb, db) = (boxes(&gt_masks), boxes(&det_masks));
            order
                .iter()
                .map(|&d| {
                    gb.iter()
                        .map(|g| match (&db[d], g) {
                            (Some(a), Some(b)) => box_iou(a, b),
                            _ => 0.0,
                        })
                        .collect()
                })
                .collect()
        }
    };

    let mut tp = Vec::with_capacity(thresholds.len());
    let mut matches_at_50 = vec![None; det_masks.len()];
    for (ti, &t) in thresholds.iter().enumerate() {
        let matched = greedy_match(&ious, gt_masks.len(), t);
        if ti == 0 {
            for (&d, m) in order.iter().zip(&matched) {
                matches_at_50[d] = *m;
            }
        }
        tp.push(matched.iter().map(Option::is_some).collect());
    }
    Ok(ImageEval {
        record: ImageMatchRecord {
            image_id: image_id.to_string(),
            num_gt: gt_masks.len(),
            num_dets: det_masks.len(),
            matches_at_50,
        },
        scores: order.iter().map(|&d| scores[d]).collect(),
        tp,
    })
}

/// Interpolated precision at each recall threshold, plus final recall.
fn precision_recall(tp_flags: &[bool], num_gt: usize, rec_thrs: &[f64]) -> (Vec<f64>, f64) {
    let nd = tp_flags.len();
    let mut rc = Vec::with_capacity(nd);
    let mut pr = Vec::with_capacity(nd);
    let (mut tp, mut fp) = (0f64, 0f64);
    for &hit in tp_flags {
        if hit {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        rc.push(tp / num_gt as f64);
        // tp + fp >= 1 here, so no epsilon guard; a single perfect hit
        // scores exactly 1.
        pr.push(tp / (fp + tp));
    }
    for i in (1..nd).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let q = rec_thrs
        .iter()
        .map(|&r| {
            let pi = rc.partition_point(|&x| x < r);
            if pi < nd {
                pr[pi]
            } else {
                0.0
            }
        })
        .collect();
    (q, rc.last().copied().unwrap_or(0.0))
}

pub fn evaluate(predictions: &MaskFile, ground_truth: &MaskFile, kind: IouKind) -> Result<EvalReport> {
    evaluate_with(predictions, ground_truth, kind, Execution::default())
}

/// Evaluates predictions against ground truth. Images are the ground
/// truth's, in file order, followed by prediction-only images.
pub fn evaluate_with(
    predictions: &MaskFile,
    ground_truth: &MaskFile,
    kind: IouKind,
    exec: Execution,
) -> Result<EvalReport> {
    use std::collections::HashMap;

    let thresholds = iou_thresholds();
    let rec_thrs = recall_thresholds();

    let gt_by_id: HashMap<&str, &ImageMasks> =
        ground_truth.images.iter().map(|im| (im.image_id.as_str(), im)).collect();
    let pred_by_id: HashMap<&str, &ImageMasks> =
        predictions.images.iter().map(|im| (im.image_id.as_str(), im)).collect();
    if gt_by_id.len() != ground_truth.images.len() || pred_by_id.len() != predictions.images.len() {
        return Err(Error::Config("duplicate image_id".into()));
    }
    let mut ids: Vec<(&str, (usize, usize))> =
        ground_truth.images.iter().map(|im| (im.image_id.as_str(), (im.height, im.width))).collect();
    for im in &predictions.images {
        if !gt_by_id.contains_key(im.image_id.as_str()) {
            ids.push((im.image_id.as_str(), (im.height, im.width)));
        }
    }

    let per_image = exec.try_map(&ids, |&(id, dims)| {
        evaluate_image(id, dims, gt_by_id.get(id).copied(), pred_by_id.get(id).copied(), kind, &thresholds)
    })?;

    let num_gt: usize = per_image.iter().map(|e| e.record.num_gt).sum();
    let num_dets: usize = per_image.iter().map(|e| e.record.num_dets).sum();

    // Global ranking: stable on score, so ties keep image then per-image order.
    let mut ranked: Vec<(usize, usize)> = per_image
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.scores.len()).map(move |k| (i, k)))
        .collect();
    ranked.sort_by(|a, b| per_image[b.0].scores[b.1].total_cmp(&per_image[a.0].scores[a.1]));

    let mut per_threshold_ap = vec![0.0; thresholds.len()];
    let mut per_threshold_recall = vec![0.0; thresholds.len()];
    if num_gt > 0 {
        for t in 0..thresholds.len() {
            let flags: Vec<bool> = ranked.iter().map(|&(i, k)| per_image[i].tp[t][k]).collect();
            let (q, recall) = precision_recall(&flags, num_gt, &rec_thrs);
            per_threshold_ap[t] = q.iter().sum::<f64>() / q.len() as f64;
            per_threshold_recall[t] = recall;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalReport {
        iou_type: kind,
        ap: mean(&per_threshold_ap),
        ap50: per_threshold_ap[0],
        ar100: mean(&per_threshold_recall),
        iou_thresholds: thresholds,
        per_threshold_ap,
        per_threshold_recall,
        num_images: per_image.len(),
        num_gt,
        num_dets,
        no_ground_truth: num_gt == 0,
        images: per_image.into_iter().map(|e| e.record).collect(),
    })
}
