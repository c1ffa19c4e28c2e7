//! Seeded synthetic scenes.
//!
//! Detection scenes hold Gaussian clusters of small objects whose centres are
//! drawn around configurable hotspots (or uniformly when none are given), plus
//! optional large distractors. Segmentation scenes hold one object mask made of
//! an ellipse with thin limbs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnvError, Scene, SceneObject};
use crate::geometry::{BBox, BitMask, Frame};
use crate::rng::{self, StreamRng};
use crate::TaskKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub kind: TaskKind,
    pub width: u32,
    pub height: u32,
    pub detection: DetectionGenConfig,
    pub segmentation: SegmentationGenConfig,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Detection,
            width: 1024,
            height: 1024,
            detection: DetectionGenConfig::default(),
            segmentation: SegmentationGenConfig::default(),
        }
    }
}

impl SceneGenConfig {
    /// Default segmentation scenes: a single object on a 256x256 frame.
    pub fn segmentation_default() -> Self {
        Self {
            kind: TaskKind::Segmentation,
            width: 256,
            height: 256,
            ..Self::default()
        }
    }

    pub fn frame(&self) -> Result<Frame, EnvError> {
        Ok(Frame::new(self.width, self.height)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionGenConfig {
    pub category: String,
    pub clusters_min: u32,
    pub clusters_max: u32,
    pub objects_per_cluster_min: u32,
    pub objects_per_cluster_max: u32,
    /// Spread of objects around their cluster centre, in pixels.
    pub cluster_sigma: f64,
    /// Preferred cluster centres as fractions of the frame; empty means uniform.
    pub hotspots: Vec<[f64; 2]>,
    /// Spread of a cluster centre around its hotspot, in pixels.
    pub hotspot_jitter: f64,
    pub object_side_min: u32,
    pub object_side_max: u32,
    pub distractors: u32,
    pub distractor_side_min: u32,
    pub distractor_side_max: u32,
    pub distractor_category: String,
    /// Placement retries per object before the config is declared infeasible.
    pub max_attempts: u32,
}

impl Default for DetectionGenConfig {
    fn default() -> Self {
        Self {
            category: "coin".into(),
            clusters_min: 2,
            clusters_max: 3,
            objects_per_cluster_min: 8,
            objects_per_cluster_max: 10,
            cluster_sigma: 14.0,
            // Centres shared by the quarter and sixth anchor windows.
            hotspots: vec![[0.25, 0.25], [0.75, 0.5], [0.5, 0.75]],
            hotspot_jitter: 10.0,
            object_side_min: 4,
            object_side_max: 6,
            distractors: 0,
            distractor_side_min: 120,
            distractor_side_max: 240,
            distractor_category: "table".into(),
            max_attempts: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationGenConfig {
    pub category: String,
    /// Ellipse radii as fractions of the shorter frame side.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Spread of the object centre around the frame centre, in pixels.
    pub center_jitter: f64,
    pub limbs: u32,
    /// Limb length as a fraction of the shorter frame side.
    pub limb_length: f64,
    pub limb_thickness: u32,
}

impl Default for SegmentationGenConfig {
    fn default() -> Self {
        Self {
            category: "harp".into(),
            radius_min: 0.14,
            radius_max: 0.24,
            center_jitter: 10.0,
            limbs: 2,
            limb_length: 0.3,
            limb_thickness: 3,
        }
    }
}

fn check_range(lo: u32, hi: u32, what: &str) -> Result<(), EnvError> {
    if lo > hi {
        return Err(EnvError::Generation(format!("{what}: min {lo} exceeds max {hi}")));
    }
    Ok(())
}

/// Generates one scene; the result depends only on `(cfg, seed)`.
pub fn generate_scene(cfg: &SceneGenConfig, seed: u64, scene_id: u64) -> Result<Scene, EnvError> {
    let frame = cfg.frame()?;
    let mut rng = rng::stream(seed, &[rng::label::SCENE, scene_id]);
    match cfg.kind {
        TaskKind::Detection => generate_detection(&cfg.detection, frame, scene_id, &mut rng),
        TaskKind::Segmentation => generate_segmentation(&cfg.segmentation, frame, scene_id, &mut rng),
    }
}

pub fn generate_scenes(cfg: &SceneGenConfig, seed: u64, count: usize) -> Result<Vec<Scene>, EnvError> {
    (0..count as u64).map(|id| generate_scene(cfg, seed, id)).collect()
}

fn place_box(
    rng: &mut StreamRng,
    frame: Frame,
    placed: &[BBox],
    side_range: (u32, u32),
    max_attempts: u32,
    mut center: impl FnMut(&mut StreamRng) -> (f64, f64),
) -> Option<BBox> {
    for _ in 0..max_attempts.max(1) {
        let w = rng.random_range(side_range.0..=side_range.1) as i64;
        let h = rng.random_range(side_range.0..=side_range.1) as i64;
        let (cx, cy) = center(rng);
        let x1 = (cx - w as f64 / 2.0).round() as i64;
        let y1 = (cy - h as f64 / 2.0).round() as i64;
        let Ok(b) = BBox::from_xywh(x1, y1, w, h) else {
            continue;
        };
        if b.in_frame(frame) && placed.iter().all(|p| p.intersection(&b).is_none()) {
            return Some(b);
        }
    }
    None
}

fn generate_detection(
    cfg: &DetectionGenConfig,
    frame: Frame,
    scene_id: u64,
    rng: &mut StreamRng,
) -> Result<Scene, EnvError> {
    check_range(cfg.clusters_min, cfg.clusters_max, "clusters")?;
    check_range(
        cfg.objects_per_cluster_min,
        cfg.objects_per_cluster_max,
        "objects_per_cluster",
    )?;
    check_range(cfg.object_side_min, cfg.object_side_max, "object_side")?;
    check_range(cfg.distractor_side_min, cfg.distractor_side_max, "distractor_side")?;
    if cfg.object_side_min == 0 || (cfg.distractors > 0 && cfg.distractor_side_min == 0) {
        return Err(EnvError::Generation("object sides must be positive".into()));
    }
    if cfg.object_side_max > frame.shorter_side()
        || (cfg.distractors > 0 && cfg.distractor_side_max > frame.shorter_side())
    {
        return Err(EnvError::Generation("objects cannot fit in the frame".into()));
    }
    let (w, h) = (frame.width as f64, frame.height as f64);
    let mut placed: Vec<BBox> = Vec::new();
    let mut objects = Vec::new();

    for _ in 0..cfg.distractors {
        let b = place_box(
            rng,
            frame,
            &placed,
            (cfg.distractor_side_min, cfg.distractor_side_max),
            cfg.max_attempts,
            |r| (r.random_range(0.0..w), r.random_range(0.0..h)),
        )
        .ok_or_else(|| EnvError::Generation("distractors cannot fit".into()))?;
        placed.push(b);
        objects.push(SceneObject::from_box(b, cfg.distractor_category.clone()));
    }

    let clusters = rng.random_range(cfg.clusters_min..=cfg.clusters_max) as usize;
    let mut hotspot_order: Vec<usize> = (0..cfg.hotspots.len()).collect();
    hotspot_order.shuffle(rng);
    let jitter = Normal::new(0.0, cfg.hotspot_jitter.max(0.0)).map_err(|e| EnvError::Generation(e.to_string()))?;
    let spread = Normal::new(0.0, cfg.cluster_sigma.max(0.0)).map_err(|e| EnvError::Generation(e.to_string()))?;
    for c in 0..clusters {
        let (hx, hy) = if hotspot_order.is_empty() {
            (rng.random_range(0.0..w), rng.random_range(0.0..h))
        } else {
            let [fx, fy] = cfg.hotspots[hotspot_order[c % hotspot_order.len()]];
            (fx * w + jitter.sample(rng), fy * h + jitter.sample(rng))
        };
        let count = rng.random_range(cfg.objects_per_cluster_min..=cfg.objects_per_cluster_max);
        for _ in 0..count {
            let b = place_box(
                rng,
                frame,
                &placed,
                (cfg.object_side_min, cfg.object_side_max),
                cfg.max_attempts,
                |r| (hx + spread.sample(r), hy + spread.sample(r)),
            )
            .ok_or_else(|| EnvError::Generation("objects cannot fit around their cluster centre".into()))?;
            placed.push(b);
            objects.push(SceneObject::from_box(b, cfg.category.clone()));
        }
    }
    Ok(Scene::new(scene_id, frame, objects, None)?)
}

fn generate_segmentation(
    cfg: &SegmentationGenConfig,
    frame: Frame,
    scene_id: u64,
    rng: &mut StreamRng,
) -> Result<Scene, EnvError> {
    if !(cfg.radius_min > 0.0 && cfg.radius_min <= cfg.radius_max && cfg.radius_max < 0.5) {
        return Err(EnvError::Generation("need 0 < radius_min <= radius_max < 0.5".into()));
    }
    let side = frame.shorter_side() as f64;
    let jitter = Normal::new(0.0, cfg.center_jitter.max(0.0)).map_err(|e| EnvError::Generation(e.to_string()))?;
    let cx = frame.width as f64 / 2.0 + jitter.sample(rng);
    let cy = frame.height as f64 / 2.0 + jitter.sample(rng);
    let rx = rng.random_range(cfg.radius_min..=cfg.radius_max) * side;
    let ry = rng.random_range(cfg.radius_min..=cfg.radius_max) * side;
    let limbs: Vec<(f64, f64, f64)> = (0..cfg.limbs)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let len = cfg.limb_length * side * rng.random_range(0.7..=1.0) + rx.max(ry);
            (angle.cos(), angle.sin(), len)
        })
        .collect();
    let half_thick = cfg.limb_thickness as f64 / 2.0;
    let mask = BitMask::from_fn(frame, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        if (dx / rx).powi(2) + (dy / ry).powi(2) <= 1.0 {
            return true;
        }
        limbs.iter().any(|&(ux, uy, len)| {
            let along = dx * ux + dy * uy;
            let across = (dx * -uy + dy * ux).abs();
            along >= 0.0 && along <= len && across <= half_thick
        })
    });
    let object = SceneObject::from_mask(mask.clone(), cfg.category.clone())
        .ok_or_else(|| EnvError::Generation("segmentation object is empty".into()))?;
    Ok(Scene::new(scene_id, frame, vec![object], Some(mask))?)
}
