//! The zoom-in environment: scenes, the crop-and-resize sensing channel, a
//! simulated detector, oracle mask refinement and episode runners.

mod episode;
mod generate;
mod scene;
mod segmentation;
mod sensing;

pub use episode::{
    evaluate_detection, evaluate_segmentation, initial_seg_state, run_detection_episode, run_episode,
    run_segmentation_episode, EpisodeConfig, EpisodeRecord, DEDUP_IOU,
};
pub use generate::{generate_scene, generate_scenes, DetectionGenConfig, SceneGenConfig, SegmentationGenConfig};
pub(crate) use scene::SceneRepr;
pub use scene::{Scene, SceneError, SceneObject};
pub use segmentation::{corrupt_mask, oracle_refine, CorruptionConfig, SegState};
pub use sensing::{
    apply_sensing, initial_observation, simulated_task_model, Observation, SensingConfig, TaskModelConfig,
};

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("sensing budget of {0} steps is exhausted")]
    BudgetExhausted(u32),
    #[error("scene {0} has no ground-truth mask")]
    MissingMask(u64),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("policy failed: {0}")]
    Policy(String),
}
