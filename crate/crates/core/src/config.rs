//! Run configuration and the standard synthetic benchmarks.

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeConfig, SceneGenConfig};
use crate::grpo::GrpoConfig;
use crate::metrics::SizeBuckets;
use crate::policy::EndpointConfig;
use crate::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Random,
    Grid,
    Oracle,
    Trained,
    External,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Grid => "grid",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Trained => "trained",
            PolicyKind::External => "external",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "grid" => Ok(Self::Grid),
            "oracle" => Ok(Self::Oracle),
            "trained" => Ok(Self::Trained),
            "external" => Ok(Self::External),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub policy: PolicyKind,
    /// Cells per side for the grid baseline.
    pub grid_side: u32,
    /// Matching threshold for the reported AP/AR (0.1 for the relaxed
    /// small-object protocol).
    pub iou_thr: f64,
    /// Decode the trained policy by top-k logits instead of sampling.
    pub greedy: bool,
    /// Padding around object groups for the detection oracle.
    pub oracle_pad: i64,
    pub size_buckets: SizeBuckets,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Random,
            grid_side: 2,
            iou_thr: 0.5,
            greedy: true,
            oracle_pad: 2,
            size_buckets: SizeBuckets::default(),
        }
    }
}

/// Everything a subcommand needs; every section falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Number of scenes produced by `gen-scenes`.
    pub num_scenes: usize,
    pub scenes: SceneGenConfig,
    pub episode: EpisodeConfig,
    pub grpo: GrpoConfig,
    pub eval: EvalConfig,
    pub endpoint: EndpointConfig,
}

impl RunConfig {
    /// The detection benchmark: dense clusters of 4 to 6 pixel objects on a
    /// 1024x1024 frame, `K = 3`, noiseless task model. The step size is much
    /// larger than the trainer default because the gradient is averaged over
    /// 16 groups and spread across a few hundred anchors.
    pub fn detection_benchmark() -> Self {
        Self {
            seed: 0,
            num_scenes: 50,
            scenes: SceneGenConfig::default(),
            episode: EpisodeConfig::default(),
            grpo: GrpoConfig {
                iterations: 500,
                learning_rate: 0.5,
                scenes_per_iteration: 16,
                ..GrpoConfig::default()
            },
            eval: EvalConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }

    /// The segmentation benchmark: one corrupted object mask per 256x256
    /// frame, three sequential refinements.
    pub fn segmentation_benchmark() -> Self {
        let mut cfg = Self::detection_benchmark();
        cfg.scenes = SceneGenConfig::segmentation_default();
        cfg.episode.task = TaskKind::Segmentation;
        cfg
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Detection => Self::detection_benchmark(),
            TaskKind::Segmentation => Self::segmentation_benchmark(),
        }
    }
}
