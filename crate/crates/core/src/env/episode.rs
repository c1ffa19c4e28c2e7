//! Single-step episodes: one sensing decision from the global view, then
//! detection over every crop (in parallel) or sequential mask refinement.

use serde::{Deserialize, Serialize};

use super::{
    apply_sensing, corrupt_mask, initial_observation, oracle_refine, simulated_task_model, CorruptionConfig, EnvError,
    Observation, Scene, SegState, SensingConfig, TaskModelConfig,
};
use crate::geometry::{BBox, Frame};
use crate::heuristic::{heuristic_total, HeuristicConfig, HeuristicInputs, RewardBreakdown};
use crate::metrics::{ap_ar_at, nms, r_seg, Detection, RewardMode, DETECT_IOU};
use crate::policy::{PolicyOutput, ProposalContext, SensingPolicy};
use crate::response::parse_and_validate;
use crate::rng;
use crate::TaskKind;

/// IoU above which detections of one category from different crops are merged.
pub const DEDUP_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EpisodeConfig {
    pub task: TaskKind,
    pub sensing: SensingConfig,
    pub task_model: TaskModelConfig,
    pub heuristic: HeuristicConfig,
    pub corruption: CorruptionConfig,
    pub reward_mode: RewardMode,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        self.sensing.validate()?;
        self.task_model.validate()?;
        self.heuristic.validate().map_err(|e| EnvError::Config(e.to_string()))
    }

    /// Proposals requested from the policy: `K` for segmentation, and
    /// `min(K, k_parallel)` for a single parallel detection step.
    pub fn proposals_per_episode(&self) -> usize {
        match self.task {
            TaskKind::Detection => self.sensing.budget_k.min(self.sensing.k_parallel) as usize,
            TaskKind::Segmentation => self.sensing.budget_k as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene_id: u64,
    pub seed: u64,
    pub sample_index: u64,
    pub policy: String,
    pub task: TaskKind,
    pub format_ok: bool,
    /// Applied sensing actions in full-frame coordinates, in order.
    pub actions: Vec<BBox>,
    pub observations: Vec<Observation>,
    /// Merged, deduplicated detections (detection episodes).
    pub detections: Vec<Detection>,
    pub ap50: Option<f64>,
    pub ar50: Option<f64>,
    /// mIoU before any action and after each applied action (segmentation).
    pub miou_trajectory: Vec<f64>,
    pub reward: RewardBreakdown,
    pub log_prob: f64,
    pub raw_text: Option<String>,
}

/// Checks the policy output: raw text is validated in the frame of the
/// initial observation, structured proposals in the scene frame.
fn format_check(out: &PolicyOutput, scene_frame: Frame, obs0: &Observation, task: TaskKind) -> bool {
    let (k_min, k_max) = task.proposal_bounds();
    match &out.raw_text {
        Some(text) => parse_and_validate(text, obs0.transform.target_frame(), task).is_ok(),
        None => (k_min..=k_max).contains(&out.proposals.len()) && out.proposals.iter().all(|b| b.in_frame(scene_frame)),
    }
}

fn usable(out: &PolicyOutput, format_ok: bool, frame: Frame) -> Vec<BBox> {
    if format_ok {
        out.proposals.clone()
    } else {
        // Keep in-frame boxes so the task model still runs; rewards for the
        // response itself are zeroed.
        out.proposals.iter().copied().filter(|b| b.in_frame(frame)).collect()
    }
}

/// Scores a detection decision. `out` is what the policy produced from the
/// initial observation of `scene`.
pub fn evaluate_detection(
    scene: &Scene,
    out: &PolicyOutput,
    cfg: &EpisodeConfig,
    seed: u64,
    sample_index: u64,
    policy: &str,
) -> Result<EpisodeRecord, EnvError> {
    let frame = scene.frame();
    let obs0 = initial_observation(scene, &cfg.sensing);
    let format_ok = format_check(out, frame, &obs0, TaskKind::Detection);
    let mut boxes = usable(out, format_ok, frame);
    boxes.truncate(cfg.proposals_per_episode());

    let mut tm_rng = rng::stream(seed, &[rng::label::TASK_MODEL, scene.scene_id(), sample_index]);
    let mut observations = Vec::with_capacity(boxes.len());
    let mut raw: Vec<Detection> = Vec::new();
    for a in &boxes {
        let obs = apply_sensing(scene, a, &cfg.sensing)?;
        raw.extend(simulated_task_model(&obs, scene, &cfg.task_model, &mut tm_rng));
        observations.push(obs);
    }
    let detections = nms(&raw, DEDUP_IOU);
    let gts = scene.ground_truth();
    let (ap50, ar50) = ap_ar_at(&detections, &gts, DETECT_IOU);

    let gt_boxes = scene.gt_boxes();
    let inputs = HeuristicInputs {
        format_ok,
        boxes: if format_ok { &out.proposals } else { &[] },
        frame,
        gt_boxes: &gt_boxes,
        gt_mask: scene.merged_gt_mask(),
        pred_mask: None,
    };
    let reward = heuristic_total(&inputs, &cfg.heuristic)?.with_task(ap50 + ar50, cfg.reward_mode.weights());
    Ok(EpisodeRecord {
        scene_id: scene.scene_id(),
        seed,
        sample_index,
        policy: policy.to_string(),
        task: TaskKind::Detection,
        format_ok,
        actions: boxes,
        observations,
        detections,
        ap50: Some(ap50),
        ar50: Some(ar50),
        miou_trajectory: Vec::new(),
        reward,
        log_prob: out.log_prob,
        raw_text: out.raw_text.clone(),
    })
}

/// Initial segmentation state: the scene mask corrupted with a stream that
/// depends only on `(seed, scene_id)`, so every policy faces the same errors.
pub fn initial_seg_state(scene: &Scene, cfg: &EpisodeConfig, seed: u64) -> Result<SegState, EnvError> {
    let gt = scene.merged_gt_mask().ok_or(EnvError::MissingMask(scene.scene_id()))?;
    let pred = corrupt_mask(gt, &cfg.corruption, rng::derive_seed(seed, &[scene.scene_id()]));
    SegState::new(pred, gt.clone(), cfg.sensing.budget_k)
}

/// Applies proposals in order until the budget runs out, recording mIoU
/// after each step.
pub fn evaluate_segmentation(
    scene: &Scene,
    start: &SegState,
    out: &PolicyOutput,
    cfg: &EpisodeConfig,
    seed: u64,
    sample_index: u64,
    policy: &str,
) -> Result<EpisodeRecord, EnvError> {
    let frame = scene.frame();
    let obs0 = initial_observation(scene, &cfg.sensing);
    let format_ok = format_check(out, frame, &obs0, TaskKind::Segmentation);
    let mut boxes = usable(out, format_ok, frame);
    boxes.truncate((start.budget_k - start.steps_used) as usize);

    let mut state = start.clone();
    let mut trajectory = vec![state.miou()];
    let mut observations = Vec::with_capacity(boxes.len());
    for a in &boxes {
        observations.push(apply_sensing(scene, a, &cfg.sensing)?);
        state = oracle_refine(&state, a)?;
        trajectory.push(state.miou());
    }
    let miou = *trajectory.last().expect("trajectory starts with the initial mIoU");

    let gt_boxes = scene.gt_boxes();
    let inputs = HeuristicInputs {
        format_ok,
        boxes: if format_ok { &out.proposals } else { &[] },
        frame,
        gt_boxes: &gt_boxes,
        gt_mask: Some(&state.gt_mask),
        pred_mask: Some(&state.pred_mask),
    };
    debug_assert_eq!(r_seg(&state.pred_mask, &state.gt_mask).ok(), Some(miou));
    let reward = heuristic_total(&inputs, &cfg.heuristic)?.with_task(miou, cfg.reward_mode.weights());
    Ok(EpisodeRecord {
        scene_id: scene.scene_id(),
        seed,
        sample_index,
        policy: policy.to_string(),
        task: TaskKind::Segmentation,
        format_ok,
        actions: boxes,
        observations,
        detections: Vec::new(),
        ap50: None,
        ar50: None,
        miou_trajectory: trajectory,
        reward,
        log_prob: out.log_prob,
        raw_text: out.raw_text.clone(),
    })
}

fn propose(
    scene: &Scene,
    policy: &dyn SensingPolicy,
    cfg: &EpisodeConfig,
    seg_state: Option<&SegState>,
    seed: u64,
    sample_index: u64,
) -> Result<PolicyOutput, EnvError> {
    let obs0 = initial_observation(scene, &cfg.sensing);
    let ctx = ProposalContext {
        scene,
        observation: &obs0,
        task: cfg.task,
        k: cfg.proposals_per_episode(),
        seg_state,
    };
    let mut prng = rng::stream(seed, &[rng::label::POLICY, scene.scene_id(), sample_index]);
    policy
        .propose(&ctx, &mut prng)
        .map_err(|e| EnvError::Policy(e.to_string()))
}

pub fn run_detection_episode(
    scene: &Scene,
    policy: &dyn SensingPolicy,
    cfg: &EpisodeConfig,
    seed: u64,
    sample_index: u64,
) -> Result<EpisodeRecord, EnvError> {
    let out = propose(scene, policy, cfg, None, seed, sample_index)?;
    evaluate_detection(scene, &out, cfg, seed, sample_index, &policy.name())
}

pub fn run_segmentation_episode(
    scene: &Scene,
    policy: &dyn SensingPolicy,
    cfg: &EpisodeConfig,
    seed: u64,
    sample_index: u64,
) -> Result<EpisodeRecord, EnvError> {
    let start = initial_seg_state(scene, cfg, seed)?;
    let out = propose(scene, policy, cfg, Some(&start), seed, sample_index)?;
    evaluate_segmentation(scene, &start, &out, cfg, seed, sample_index, &policy.name())
}

/// Runs the episode kind selected by `cfg.task`.
pub fn run_episode(
    scene: &Scene,
    policy: &dyn SensingPolicy,
    cfg: &EpisodeConfig,
    seed: u64,
    sample_index: u64,
) -> Result<EpisodeRecord, EnvError> {
    match cfg.task {
        TaskKind::Detection => run_detection_episode(scene, policy, cfg, seed, sample_index),
        TaskKind::Segmentation => run_segmentation_episode(scene, policy, cfg, seed, sample_index),
    }
}
