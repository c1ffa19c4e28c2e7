//! Single-step zoom-in active perception at desk scale.
//!
//! A sensing policy looks at a low-resolution view of a scene and proposes up
//! to `K` regions to zoom into. A simulated task model detects objects (or an
//! oracle refines a segmentation mask) inside each crop, and the episode is
//! scored with heuristic proposal rewards plus task rewards. The [`grpo`]
//! module trains an anchor-grid policy against those rewards.

// Negated comparisons double as NaN rejection in config validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataio;
pub mod env;
pub mod geometry;
pub mod grpo;
pub mod heuristic;
pub mod metrics;
pub mod policy;
pub mod response;
pub mod rng;

use serde::{Deserialize, Serialize};

pub use geometry::{area_ratio, iou, mask_dice, mask_iou, BBox, BitMask, CropTransform, Frame};
pub use heuristic::{HeuristicConfig, RewardBreakdown};
pub use metrics::{Detection, EvalResult, GroundTruth};
pub use policy::{AnchorGridPolicy, PolicyOutput, SensingPolicy};
pub use response::{parse_response, StructuredResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Detection,
    Segmentation,
}

impl TaskKind {
    /// Allowed proposal count: "up to three" regions for detection,
    /// "exactly three" for segmentation.
    pub fn proposal_bounds(self) -> (usize, usize) {
        match self {
            TaskKind::Detection => (1, 3),
            TaskKind::Segmentation => (3, 3),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Detection => "detection",
            TaskKind::Segmentation => "segmentation",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detection" => Ok(TaskKind::Detection),
            "segmentation" => Ok(TaskKind::Segmentation),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}
