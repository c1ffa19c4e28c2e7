use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnvError, Scene};
use crate::geometry::{BBox, CropTransform};
use crate::metrics::Detection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensingConfig {
    /// Maximum sensing actions per episode.
    pub budget_k: u32,
    /// Shorter side of the low-resolution global view.
    pub init_shorter_side: u32,
    /// Side of the square each crop is resized to.
    pub crop_resolution: u32,
    /// Proposals consumed per step in detection episodes.
    pub k_parallel: u32,
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            budget_k: 3,
            init_shorter_side: 1024,
            crop_resolution: 840,
            k_parallel: 3,
        }
    }
}

impl SensingConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.budget_k == 0 || self.init_shorter_side == 0 || self.crop_resolution == 0 || self.k_parallel == 0 {
            return Err(EnvError::Config(
                "sensing budget, resolutions and k_parallel must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub transform: CropTransform,
    /// Apparent magnification relative to native resolution.
    pub effective_scale: f64,
    pub visible_frame: BBox,
}

impl Observation {
    fn from_transform(transform: CropTransform) -> Self {
        Self {
            effective_scale: transform.scale_x().min(transform.scale_y()),
            visible_frame: transform.source(),
            transform,
        }
    }
}

/// Global thumbnail: the full frame resized so its shorter side equals
/// `init_shorter_side`, aspect ratio preserved.
pub fn initial_observation(scene: &Scene, cfg: &SensingConfig) -> Observation {
    let frame = scene.frame();
    let scale = cfg.init_shorter_side as f64 / frame.shorter_side() as f64;
    let tw = ((frame.width as f64 * scale).round() as u32).max(1);
    let th = ((frame.height as f64 * scale).round() as u32).max(1);
    let transform = CropTransform::new(frame.full_box(), tw, th).expect("positive target");
    Observation::from_transform(transform)
}

/// Crops `a_cam` and resizes it to the fixed square crop resolution.
pub fn apply_sensing(scene: &Scene, a_cam: &BBox, cfg: &SensingConfig) -> Result<Observation, EnvError> {
    a_cam.check_in_frame(scene.frame())?;
    let transform = CropTransform::new(*a_cam, cfg.crop_resolution, cfg.crop_resolution)?;
    Ok(Observation::from_transform(transform))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskModelConfig {
    /// Smallest apparent (post-zoom) object area that can be detected, px².
    pub min_apparent_area: f64,
    pub miss_rate: f64,
    /// Standard deviation of per-coordinate box jitter in crop pixels.
    pub jitter_sigma: f64,
    /// Apparent area, as a multiple of `min_apparent_area`, that earns score 1.
    pub score_saturation: f64,
}

impl Default for TaskModelConfig {
    fn default() -> Self {
        Self {
            min_apparent_area: 100.0,
            miss_rate: 0.0,
            jitter_sigma: 0.0,
            score_saturation: 2.0,
        }
    }
}

impl TaskModelConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.min_apparent_area > 0.0) || !(self.score_saturation > 0.0) {
            return Err(EnvError::Config(
                "min_apparent_area and score_saturation must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) || !(self.jitter_sigma >= 0.0) {
            return Err(EnvError::Config(
                "miss_rate must lie in [0, 1] and jitter_sigma be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Surrogate detector: an object is found when its centre is in view and its
/// zoomed area `area * effective_scale²` reaches the detectability threshold.
/// Boxes are clipped to the crop, optionally jittered in crop pixels and
/// mapped back to full-image coordinates.
pub fn simulated_task_model<R: Rng + ?Sized>(
    obs: &Observation,
    scene: &Scene,
    cfg: &TaskModelConfig,
    rng: &mut R,
) -> Vec<Detection> {
    let visible = obs.visible_frame;
    let jitter = (cfg.jitter_sigma > 0.0).then(|| Normal::new(0.0, cfg.jitter_sigma).expect("finite sigma"));
    let target = obs.transform.target_frame();
    let mut out = Vec::new();
    for object in scene.objects() {
        let (cx, cy) = object.bbox.center();
        if !visible.contains_point(cx, cy) {
            continue;
        }
        let apparent = object.area as f64 * obs.effective_scale * obs.effective_scale;
        if apparent < cfg.min_apparent_area {
            continue;
        }
        if cfg.miss_rate > 0.0 && rng.random::<f64>() < cfg.miss_rate {
            continue;
        }
        let clipped = object.bbox.intersection(&visible).expect("centre lies inside the crop");
        let mut local = obs.transform.remap_to_crop(&clipped);
        if let Some(noise) = &jitter {
            let mut c = local.to_array().map(|v| (v as f64 + noise.sample(rng)).round() as i64);
            c[0] = c[0].clamp(0, target.width as i64 - 1);
            c[2] = c[2].clamp(0, target.width as i64 - 1);
            c[1] = c[1].clamp(0, target.height as i64 - 1);
            c[3] = c[3].clamp(0, target.height as i64 - 1);
            local = BBox::new(c[0].min(c[2]), c[1].min(c[3]), c[0].max(c[2]), c[1].max(c[3])).expect("ordered corners");
        }
        let bbox = obs.transform.remap_to_full(&local);
        let score = (apparent / (cfg.score_saturation * cfg.min_apparent_area)).clamp(0.0, 1.0);
        out.push(Detection::new(bbox, object.category.clone(), score));
    }
    out
}
