//! Heuristic proposal rewards: format validity, pairwise non-overlap, area
//! range and coverage, combined as a weighted sum.

use serde::{Deserialize, Serialize};

use crate::geometry::{area_ratio, iou, mask_density_in_box, mask_dice, mask_iou, BBox, BitMask, Frame, GeometryError};
use crate::metrics::RewardWeights;
use crate::response::ResponseError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid heuristic config: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// Single applicable mode: mask-to-mask in segmentation episodes, then
    /// ground-truth mask, then ground-truth boxes.
    #[default]
    Auto,
    /// Convex combination of every applicable mode using `coverage_mix`.
    Mix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageMix {
    pub mask: f64,
    pub gt_box: f64,
    pub mask_to_mask: f64,
}

impl Default for CoverageMix {
    fn default() -> Self {
        Self {
            mask: 1.0,
            gt_box: 1.0,
            mask_to_mask: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    /// Maximum pairwise IoU tolerated by the non-overlap reward.
    pub tau: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Mask density a box needs to count as covering the mask.
    pub theta: f64,
    /// IoU at which a proposal matches a ground-truth box.
    pub delta: f64,
    /// Weights for format, non-overlap, area and coverage.
    pub lambda: [f64; 4],
    pub coverage_mode: CoverageMode,
    pub coverage_mix: CoverageMix,
    /// Dice (true) or IoU (false) for mask-to-mask coverage.
    pub mask_to_mask_dice: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            r_min: 0.01,
            r_max: 0.5,
            theta: 0.5,
            delta: 0.5,
            lambda: [1.0; 4],
            coverage_mode: CoverageMode::Auto,
            coverage_mix: CoverageMix::default(),
            mask_to_mask_dice: true,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(ConfigError::Invalid("tau must lie in [0, 1)"));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max <= 1.0) {
            return Err(ConfigError::Invalid("need 0 < r_min < r_max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(ConfigError::Invalid("theta must lie in [0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(ConfigError::Invalid("delta must lie in (0, 1]"));
        }
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(ConfigError::Invalid("lambda weights must be non-negative"));
        }
        let mix = self.coverage_mix;
        if [mix.mask, mix.gt_box, mix.mask_to_mask].iter().any(|w| !(*w >= 0.0)) {
            return Err(ConfigError::Invalid("coverage_mix weights must be non-negative"));
        }
        Ok(())
    }
}

/// Per-component rewards for one response, plus the task reward and the
/// scalar fed to the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_no_overlap: f64,
    pub r_area: f64,
    pub r_coverage: f64,
    pub heuristic_total: f64,
    pub r_task: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn with_task(mut self, r_task: f64, weights: RewardWeights) -> Self {
        self.r_task = r_task;
        self.total = crate::metrics::combined_reward(&self, r_task, weights);
        self
    }
}

pub fn r_format<T>(outcome: &Result<T, ResponseError>) -> f64 {
    if outcome.is_ok() {
        1.0
    } else {
        0.0
    }
}

pub fn r_no_overlap(boxes: &[BBox], tau: f64) -> f64 {
    let overlapping = boxes
        .iter()
        .enumerate()
        .any(|(i, a)| boxes[i + 1..].iter().any(|b| iou(a, b) > tau));
    if overlapping {
        0.0
    } else {
        1.0
    }
}

pub fn r_area(boxes: &[BBox], frame: Frame, r_min: f64, r_max: f64) -> f64 {
    let ok = boxes
        .iter()
        .all(|b| area_ratio(b, frame).is_ok_and(|r| r >= r_min && r <= r_max));
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Fraction of boxes whose mask density reaches `theta`; 0 for no boxes.
pub fn r_coverage_mask(boxes: &[BBox], gt_mask: &BitMask, theta: f64) -> Result<f64, GeometryError> {
    if boxes.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for b in boxes {
        if mask_density_in_box(b, gt_mask)? >= theta {
            hits += 1;
        }
    }
    Ok(hits as f64 / boxes.len() as f64)
}

/// Fraction of ground-truth boxes matched by some proposal at IoU >= `delta`;
/// 1 when there is nothing to cover.
pub fn r_coverage_gtbox(boxes: &[BBox], gt_boxes: &[BBox], delta: f64) -> f64 {
    if gt_boxes.is_empty() {
        return 1.0;
    }
    let matched = gt_boxes
        .iter()
        .filter(|g| boxes.iter().any(|b| iou(b, g) >= delta))
        .count();
    matched as f64 / gt_boxes.len() as f64
}

pub fn r_coverage_maskmask(pred: &BitMask, gt: &BitMask, use_dice: bool) -> Result<f64, GeometryError> {
    if use_dice {
        mask_dice(pred, gt)
    } else {
        mask_iou(pred, gt)
    }
}

/// Everything the heuristic reward looks at for one response.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicInputs<'a> {
    pub format_ok: bool,
    /// Validated proposals; ignored when `format_ok` is false.
    pub boxes: &'a [BBox],
    pub frame: Frame,
    pub gt_boxes: &'a [BBox],
    pub gt_mask: Option<&'a BitMask>,
    /// Final predicted mask; present only in segmentation episodes.
    pub pred_mask: Option<&'a BitMask>,
}

fn coverage(inputs: &HeuristicInputs<'_>, cfg: &HeuristicConfig) -> Result<f64, GeometryError> {
    let boxes = inputs.boxes;
    match cfg.coverage_mode {
        CoverageMode::Auto => match (inputs.pred_mask, inputs.gt_mask) {
            (Some(pred), Some(gt)) => r_coverage_maskmask(pred, gt, cfg.mask_to_mask_dice),
            (None, Some(gt)) => r_coverage_mask(boxes, gt, cfg.theta),
            _ => Ok(r_coverage_gtbox(boxes, inputs.gt_boxes, cfg.delta)),
        },
        CoverageMode::Mix => {
            let mix = cfg.coverage_mix;
            let mut num = mix.gt_box * r_coverage_gtbox(boxes, inputs.gt_boxes, cfg.delta);
            let mut den = mix.gt_box;
            if let Some(gt) = inputs.gt_mask {
                num += mix.mask * r_coverage_mask(boxes, gt, cfg.theta)?;
                den += mix.mask;
                if let Some(pred) = inputs.pred_mask {
                    num += mix.mask_to_mask * r_coverage_maskmask(pred, gt, cfg.mask_to_mask_dice)?;
                    den += mix.mask_to_mask;
                }
            }
            Ok(if den > 0.0 { num / den } else { 0.0 })
        }
    }
}

/// Weighted heuristic sum. A format failure (or an empty proposal list)
/// zeroes every spatial component.
pub fn heuristic_total(inputs: &HeuristicInputs<'_>, cfg: &HeuristicConfig) -> Result<RewardBreakdown, GeometryError> {
    if !inputs.format_ok || inputs.boxes.is_empty() {
        return Ok(RewardBreakdown::default());
    }
    let r_format = 1.0;
    let r_no_overlap = r_no_overlap(inputs.boxes, cfg.tau);
    let r_area = r_area(inputs.boxes, inputs.frame, cfg.r_min, cfg.r_max);
    let r_coverage = coverage(inputs, cfg)?;
    Ok(breakdown_from_components(
        [r_format, r_no_overlap, r_area, r_coverage],
        cfg,
    ))
}

pub fn breakdown_from_components(c: [f64; 4], cfg: &HeuristicConfig) -> RewardBreakdown {
    let heuristic_total = cfg.lambda.iter().zip(c).map(|(l, v)| l * v).sum();
    RewardBreakdown {
        r_format: c[0],
        r_no_overlap: c[1],
        r_area: c[2],
        r_coverage: c[3],
        heuristic_total,
        r_task: 0.0,
        total: heuristic_total,
    }
}
