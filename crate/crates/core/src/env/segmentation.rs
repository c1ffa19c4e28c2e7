use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::geometry::{mask_iou, BBox, BitMask, Frame};
use crate::rng;

/// Interactive segmentation state under the perfect-feedback oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SegState {
    pub pred_mask: BitMask,
    pub gt_mask: BitMask,
    pub steps_used: u32,
    pub budget_k: u32,
}

impl SegState {
    pub fn new(pred_mask: BitMask, gt_mask: BitMask, budget_k: u32) -> Result<Self, EnvError> {
        pred_mask.check_same_frame(&gt_mask)?;
        Ok(Self {
            pred_mask,
            gt_mask,
            steps_used: 0,
            budget_k,
        })
    }

    pub fn miou(&self) -> f64 {
        mask_iou(&self.pred_mask, &self.gt_mask).expect("frames checked at construction")
    }

    /// Pixels where prediction and ground truth disagree.
    pub fn disagreement(&self) -> BitMask {
        self.pred_mask
            .xor(&self.gt_mask)
            .expect("frames checked at construction")
    }
}

/// Replaces the predicted mask with ground truth inside `a_cam`.
pub fn oracle_refine(state: &SegState, a_cam: &BBox) -> Result<SegState, EnvError> {
    if state.steps_used >= state.budget_k {
        return Err(EnvError::BudgetExhausted(state.budget_k));
    }
    a_cam.check_in_frame(state.gt_mask.frame())?;
    let mut next = state.clone();
    next.pred_mask.copy_box_from(&state.gt_mask, a_cam);
    next.steps_used += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    /// Square boundary windows that erode or dilate the mask.
    pub bands: u32,
    pub band_size: u32,
    /// Square blobs whose pixels are flipped, placed near the object.
    pub blobs: u32,
    pub blob_size: u32,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            bands: 4,
            band_size: 28,
            blobs: 3,
            blob_size: 14,
        }
    }
}

fn square_at(cx: i64, cy: i64, side: u32, frame: Frame) -> Option<BBox> {
    if side == 0 {
        return None;
    }
    let half = side as i64 / 2;
    let b = BBox::from_xywh(cx - half, cy - half, side as i64, side as i64).ok()?;
    b.intersection(&frame.full_box())
}

fn boundary_pixels(m: &BitMask) -> Vec<(i64, i64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x as u32, y as u32) {
                continue;
            }
            let edge = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx < 0 || ny < 0 || nx >= w || ny >= h || !m.get(nx as u32, ny as u32)
            });
            if edge {
                out.push((x, y));
            }
        }
    }
    out
}

/// Produces an imperfect initial prediction from a ground-truth mask:
/// boundary windows that either drop object pixels or fill background, plus
/// flipped blobs near the object.
pub fn corrupt_mask(gt: &BitMask, cfg: &CorruptionConfig, seed: u64) -> BitMask {
    let mut rng = rng::stream(seed, &[rng::label::CORRUPTION]);
    let frame = gt.frame();
    let mut pred = gt.clone();
    let boundary = boundary_pixels(gt);
    if !boundary.is_empty() {
        for _ in 0..cfg.bands {
            let (x, y) = boundary[rng.random_range(0..boundary.len())];
            let Some(window) = square_at(x, y, cfg.band_size, frame) else {
                continue;
            };
            if rng.random::<bool>() {
                // under-segmentation
                for yy in window.y1()..=window.y2() {
                    for xx in window.x1()..=window.x2() {
                        if gt.get(xx as u32, yy as u32) {
                            pred.set(xx as u32, yy as u32, false);
                        }
                    }
                }
            } else {
                pred.fill_box(&window, true);
            }
        }
    }
    let region = gt
        .bounding_box()
        .map(|b| b.padded_within(cfg.blob_size as i64, frame))
        .unwrap_or_else(|| frame.full_box());
    for _ in 0..cfg.blobs {
        let cx = rng.random_range(region.x1()..=region.x2());
        let cy = rng.random_range(region.y1()..=region.y2());
        let Some(blob) = square_at(cx, cy, cfg.blob_size, frame) else {
            continue;
        };
        for yy in blob.y1()..=blob.y2() {
            for xx in blob.x1()..=blob.x2() {
                let v = pred.get(xx as u32, yy as u32);
                pred.set(xx as u32, yy as u32, !v);
            }
        }
    }
    pred
}
