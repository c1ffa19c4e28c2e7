//! Task rewards and COCO-style detection metrics.
//!
//! Matching is greedy by descending score: each prediction takes the
//! unmatched same-category ground truth with the highest IoU at or above the
//! threshold (ties go to the lower ground-truth index). AP uses 101-point
//! interpolation over the precision envelope; AR is the final recall.
//! Per-category values are macro-averaged over categories that have ground
//! truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, mask_iou, BBox, BitMask, GeometryError};
use crate::heuristic::RewardBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: String,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: impl Into<String>, score: f64) -> Self {
        debug_assert!(score.is_finite());
        Self {
            bbox,
            category: category.into(),
            score: score.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub category: String,
    /// Object area in pixels used for size buckets.
    pub area: u64,
}

impl GroundTruth {
    pub fn new(bbox: BBox, category: impl Into<String>) -> Self {
        Self {
            bbox,
            category: category.into(),
            area: bbox.area(),
        }
    }

    pub fn with_area(mut self, area: u64) -> Self {
        self.area = area;
        self
    }
}

/// Result of greedy matching on a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Prediction indices in the order they were considered.
    pub order: Vec<usize>,
    pub pred_to_gt: Vec<Option<usize>>,
    pub gt_to_pred: Vec<Option<usize>>,
}

impl Matching {
    pub fn matches(&self) -> usize {
        self.pred_to_gt.iter().flatten().count()
    }

    pub fn precision(&self) -> f64 {
        if self.pred_to_gt.is_empty() {
            return 0.0;
        }
        self.matches() as f64 / self.pred_to_gt.len() as f64
    }

    pub fn recall(&self) -> f64 {
        if self.gt_to_pred.is_empty() {
            return 0.0;
        }
        self.matches() as f64 / self.gt_to_pred.len() as f64
    }
}

/// Indices sorted by descending score; the sort is stable so equal scores
/// keep insertion order.
fn score_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

pub fn match_detections(preds: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Matching {
    let order = score_order(preds);
    let mut pred_to_gt = vec![None; preds.len()];
    let mut gt_to_pred = vec![None; gts.len()];
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_to_pred[g].is_some() || gt.category != preds[p].category {
                continue;
            }
            let v = iou(&preds[p].bbox, &gt.bbox);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            pred_to_gt[p] = Some(g);
            gt_to_pred[g] = Some(p);
        }
    }
    Matching {
        order,
        pred_to_gt,
        gt_to_pred,
    }
}

/// Half-open pixel-area interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeBuckets {
    /// Upper bound (exclusive) of the small bucket, in pixels.
    pub small_max: f64,
    /// Upper bound (exclusive) of the medium bucket.
    pub medium_max: f64,
}

impl Default for SizeBuckets {
    fn default() -> Self {
        Self {
            small_max: 32.0 * 32.0,
            medium_max: 96.0 * 96.0,
        }
    }
}

impl SizeBuckets {
    pub fn ranges(&self) -> [AreaRange; 3] {
        [
            AreaRange {
                lo: 0.0,
                hi: self.small_max,
            },
            AreaRange {
                lo: self.small_max,
                hi: self.medium_max,
            },
            AreaRange {
                lo: self.medium_max,
                hi: f64::INFINITY,
            },
        ]
    }
}

/// One image's predictions and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ImageEval<'a> {
    pub preds: &'a [Detection],
    pub gts: &'a [GroundTruth],
}

#[derive(Debug, Default)]
struct CategoryTally {
    /// (score, is_true_positive) for every non-ignored prediction.
    dets: Vec<(f64, bool)>,
    /// Non-ignored ground truth count.
    npos: usize,
}

/// Greedy matching of one image and category with COCO area-range ignores:
/// ground truth outside `range` is ignored and matched only as a last resort,
/// and predictions matched to ignored ground truth, or unmatched and outside
/// `range`, do not count.
fn tally_image_category(
    preds: &[&Detection],
    gts: &[&GroundTruth],
    iou_thr: f64,
    range: AreaRange,
    tally: &mut CategoryTally,
) {
    let ignored: Vec<bool> = gts.iter().map(|g| !range.contains(g.area as f64)).collect();
    tally.npos += ignored.iter().filter(|i| !**i).count();
    let mut taken = vec![false; gts.len()];
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for pass_ignored in [false, true] {
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || ignored[g] != pass_ignored {
                    continue;
                }
                let v = iou(&preds[p].bbox, &gt.bbox);
                if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if best.is_some() {
                break;
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                if !ignored[g] {
                    tally.dets.push((preds[p].score, true));
                }
            }
            None => {
                if range.contains(preds[p].bbox.area() as f64) {
                    tally.dets.push((preds[p].score, false));
                }
            }
        }
    }
}

/// 101-point interpolated AP and final recall for one category.
fn ap_ar_from_tally(mut tally: CategoryTally) -> (f64, f64) {
    tally.dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let npos = tally.npos as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut recall = Vec::with_capacity(tally.dets.len());
    let mut precision = Vec::with_capacity(tally.dets.len());
    for &(_, is_tp) in &tally.dets {
        if is_tp {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / npos);
        precision.push(tp / (tp + fp));
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let mut ap = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            ap += precision[idx];
        }
    }
    (ap / 101.0, recall.last().copied().unwrap_or(0.0))
}

/// Macro-averaged (AP, AR) over categories with ground truth in `range`, or
/// `None` when no category has any.
pub fn ap_ar_images(images: &[ImageEval<'_>], iou_thr: f64, range: AreaRange) -> Option<(f64, f64)> {
    let mut tallies: BTreeMap<&str, CategoryTally> = BTreeMap::new();
    for img in images {
        let categories: BTreeSet<&str> = img
            .gts
            .iter()
            .map(|g| g.category.as_str())
            .chain(img.preds.iter().map(|p| p.category.as_str()))
            .collect();
        for cat in categories {
            let preds: Vec<&Detection> = img.preds.iter().filter(|p| p.category == cat).collect();
            let gts: Vec<&GroundTruth> = img.gts.iter().filter(|g| g.category == cat).collect();
            tally_image_category(&preds, &gts, iou_thr, range, tallies.entry(cat).or_default());
        }
    }
    let per_category: Vec<(f64, f64)> = tallies
        .into_values()
        .filter(|t| t.npos > 0)
        .map(ap_ar_from_tally)
        .collect();
    if per_category.is_empty() {
        return None;
    }
    let n = per_category.len() as f64;
    let ap = per_category.iter().map(|c| c.0).sum::<f64>() / n;
    let ar = per_category.iter().map(|c| c.1).sum::<f64>() / n;
    Some((ap, ar))
}

/// AP and AR for one image at one IoU threshold. With no ground truth the
/// result is (1, 1) for no predictions and (0, 0) otherwise.
pub fn ap_ar_at(preds: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> (f64, f64) {
    ap_ar_images(&[ImageEval { preds, gts }], iou_thr, AreaRange::ALL).unwrap_or(if preds.is_empty() {
        (1.0, 1.0)
    } else {
        (0.0, 0.0)
    })
}

pub const DETECT_IOU: f64 = 0.5;

/// Detection task reward: AP@0.5 + AR@0.5, in [0, 2].
pub fn r_detect(preds: &[Detection], gts: &[GroundTruth]) -> f64 {
    let (ap, ar) = ap_ar_at(preds, gts, DETECT_IOU);
    ap + ar
}

/// Segmentation task reward: mask IoU of prediction against ground truth.
pub fn r_seg(pred: &BitMask, gt: &BitMask) -> Result<f64, GeometryError> {
    mask_iou(pred, gt)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

fn threshold_key(t: f64) -> String {
    format!("{t:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap_by_threshold: BTreeMap<String, f64>,
    pub ar_by_threshold: BTreeMap<String, f64>,
    /// Size-bucket values averaged over the thresholds; `None` when the
    /// bucket has no ground truth.
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar_small: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
    pub coco_ap: f64,
}

impl EvalResult {
    pub fn ap_at(&self, iou_thr: f64) -> Option<f64> {
        self.ap_by_threshold.get(&threshold_key(iou_thr)).copied()
    }

    pub fn ar_at(&self, iou_thr: f64) -> Option<f64> {
        self.ar_by_threshold.get(&threshold_key(iou_thr)).copied()
    }
}

fn bucket_mean(images: &[ImageEval<'_>], range: AreaRange) -> (Option<f64>, Option<f64>) {
    let per_thr: Option<Vec<(f64, f64)>> = coco_thresholds()
        .iter()
        .map(|&t| ap_ar_images(images, t, range))
        .collect();
    match per_thr {
        Some(v) => {
            let n = v.len() as f64;
            (
                Some(v.iter().map(|x| x.0).sum::<f64>() / n),
                Some(v.iter().map(|x| x.1).sum::<f64>() / n),
            )
        }
        None => (None, None),
    }
}

/// COCO-style evaluation over a set of images.
pub fn coco_eval(images: &[ImageEval<'_>], buckets: SizeBuckets) -> EvalResult {
    let degenerate = if images.iter().all(|i| i.preds.is_empty()) {
        (1.0, 1.0)
    } else {
        (0.0, 0.0)
    };
    let mut ap_by_threshold = BTreeMap::new();
    let mut ar_by_threshold = BTreeMap::new();
    let mut ap_sum = 0.0;
    for t in coco_thresholds() {
        let (ap, ar) = ap_ar_images(images, t, AreaRange::ALL).unwrap_or(degenerate);
        ap_sum += ap;
        ap_by_threshold.insert(threshold_key(t), ap);
        ar_by_threshold.insert(threshold_key(t), ar);
    }
    let [small, medium, large] = buckets.ranges();
    let (ap_small, ar_small) = bucket_mean(images, small);
    let (ap_medium, ar_medium) = bucket_mean(images, medium);
    let (ap_large, ar_large) = bucket_mean(images, large);
    EvalResult {
        ap_by_threshold,
        ar_by_threshold,
        ap_small,
        ap_medium,
        ap_large,
        ar_small,
        ar_medium,
        ar_large,
        coco_ap: ap_sum / 10.0,
    }
}

/// Greedy per-category non-maximum suppression; suppresses boxes whose IoU
/// with a kept higher-scoring box exceeds `iou_thr`. Output keeps score order.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for i in score_order(dets) {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.category == d.category && iou(&k.bbox, &d.bbox) > iou_thr);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Task,
    Heuristic,
    #[default]
    Combined,
}

impl RewardMode {
    pub fn weights(self) -> RewardWeights {
        match self {
            RewardMode::Task => RewardWeights {
                heuristic: 0.0,
                task: 1.0,
            },
            RewardMode::Heuristic => RewardWeights {
                heuristic: 1.0,
                task: 0.0,
            },
            RewardMode::Combined => RewardWeights::default(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RewardMode::Task => "task",
            RewardMode::Heuristic => "heuristic",
            RewardMode::Combined => "combined",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" => Ok(RewardMode::Task),
            "heuristic" => Ok(RewardMode::Heuristic),
            "combined" => Ok(RewardMode::Combined),
            other => Err(format!("unknown reward mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub heuristic: f64,
    pub task: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            heuristic: 1.0,
            task: 1.0,
        }
    }
}

pub fn combined_reward(heuristic: &RewardBreakdown, task: f64, weights: RewardWeights) -> f64 {
    weights.heuristic * heuristic.heuristic_total + weights.task * task
}
