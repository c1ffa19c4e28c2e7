//! Sensing policies: scripted baselines, the trainable anchor-grid policy and
//! a client for an external chat-completion endpoint.

pub(crate) mod anchor_grid;
mod baseline;
mod external;

pub use anchor_grid::{AnchorGridPolicy, PolicySnapshot, ReferenceSnapshot, Selection};
pub use baseline::{
    propose_grid, propose_oracle_clusters, propose_oracle_coverage, propose_random, GridPolicy, OracleClusterPolicy,
    OracleCoveragePolicy, RandomPolicy,
};
pub use external::{EndpointConfig, ExternalPolicy};

use serde::{Deserialize, Serialize};

use crate::env::{Observation, Scene, SegState};
use crate::geometry::{area_ratio, BBox, Frame};
use crate::rng::StreamRng;
use crate::TaskKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("invalid policy configuration: {0}")]
    Config(String),
    #[error("policy was built for a {expected_w}x{expected_h} frame, scene is {got_w}x{got_h}")]
    FrameMismatch {
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("box {0} is not in the anchor set")]
    UnknownAnchor(BBox),
    #[error("selection repeats anchor {0}")]
    RepeatedAnchor(usize),
}

/// One sensing decision: the ordered regions to zoom into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PolicyOutput {
    pub proposals: Vec<BBox>,
    /// Log-probability of this ordered selection; 0 for deterministic policies.
    pub log_prob: f64,
    /// Raw model output, kept for format scoring.
    pub raw_text: Option<String>,
}

impl PolicyOutput {
    pub fn deterministic(proposals: Vec<BBox>) -> Self {
        Self {
            proposals,
            log_prob: 0.0,
            raw_text: None,
        }
    }
}

/// What a policy may look at when proposing regions.
///
/// Scripted oracles read the scene annotations (and the current segmentation
/// state); learned and external policies only use the frame.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    pub scene: &'a Scene,
    pub observation: &'a Observation,
    pub task: TaskKind,
    /// Number of proposals requested.
    pub k: usize,
    pub seg_state: Option<&'a SegState>,
}

pub trait SensingPolicy: Sync {
    fn name(&self) -> String;

    fn propose(&self, ctx: &ProposalContext<'_>, rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError>;

    /// Batched proposals for one request per context; external policies
    /// override this to issue requests concurrently.
    fn propose_batch(
        &self,
        ctxs: &[ProposalContext<'_>],
        rngs: &mut [StreamRng],
    ) -> Vec<Result<PolicyOutput, PolicyError>> {
        ctxs.iter()
            .zip(rngs.iter_mut())
            .map(|(c, r)| self.propose(c, r))
            .collect()
    }
}

/// Relative window sides of the anchor grid.
pub const ANCHOR_SCALES: [u32; 4] = [2, 3, 4, 6];

fn window_starts(extent: u32, side: u32, stride: u32) -> Vec<i64> {
    if side >= extent {
        return vec![0];
    }
    let last = (extent - side) as i64;
    let mut starts: Vec<i64> = (0..).map(|i| i * stride as i64).take_while(|&s| s < last).collect();
    starts.push(last);
    starts
}

/// Square windows of side `shorter/s` for `s` in [`ANCHOR_SCALES`], placed at
/// half-window stride with a final window flush to the far edge, deduplicated
/// and restricted to area ratios in `[r_min, r_max]`.
pub fn anchors(frame: Frame, r_min: f64, r_max: f64) -> Vec<BBox> {
    let mut out: Vec<BBox> = Vec::new();
    for s in ANCHOR_SCALES {
        let side = (frame.shorter_side() / s).max(1);
        let stride = (side / 2).max(1);
        for y in window_starts(frame.height, side, stride) {
            for x in window_starts(frame.width, side, stride) {
                let b = BBox::from_xywh(x, y, side as i64, side as i64).expect("positive side");
                let ratio = area_ratio(&b, frame).expect("windows lie in frame");
                if ratio >= r_min && ratio <= r_max && !out.contains(&b) {
                    out.push(b);
                }
            }
        }
    }
    out
}
