//! Group Relative Policy Optimization for the anchor-grid policy.
//!
//! Each iteration samples `N` ordered selections per drawn context, turns
//! their rewards into group-normalized advantages and takes one plain
//! gradient-ascent step on the clipped surrogate minus a KL penalty towards
//! the frozen starting policy. Gradients are averaged over groups.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{evaluate_detection, evaluate_segmentation, initial_seg_state, EpisodeConfig, Scene, SegState};
use crate::policy::anchor_grid::{pl_grad, pl_log_prob};
use crate::policy::{AnchorGridPolicy, PolicyOutput, PolicySnapshot, ReferenceSnapshot, Selection};
use crate::rng;
use crate::TaskKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid GRPO configuration: {0}")]
    Config(String),
    #[error("batch fields have different lengths: {0}")]
    LengthMismatch(String),
    #[error("non-finite objective or gradient at iteration {iteration}, group {group}:\n{dump}")]
    NonFinite { iteration: u64, group: usize, dump: String },
    #[error("environment error: {0}")]
    Env(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size_n: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: u64,
    pub scenes_per_iteration: usize,
    /// Groups whose reward std falls below this get zero advantages.
    pub std_floor: f64,
    /// Gradient steps per sampled batch; 1 keeps the behavior policy equal
    /// to the current one.
    pub inner_updates: u32,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size_n: 8,
            clip_eps: 0.2,
            kl_beta: 0.04,
            learning_rate: 0.05,
            iterations: 300,
            scenes_per_iteration: 4,
            std_floor: 1e-8,
            inner_updates: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let err = |m: &str| Err(GrpoError::Config(m.into()));
        if self.group_size_n < 2 {
            return err("group_size_n must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return err("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0) {
            return err("kl_beta must be non-negative");
        }
        // A zero rate is allowed: it runs the loop without moving the policy.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return err("learning_rate must be finite and non-negative");
        }
        if self.scenes_per_iteration == 0 || self.inner_updates == 0 {
            return err("scenes_per_iteration and inner_updates must be positive");
        }
        if !(self.std_floor > 0.0) {
            return err("std_floor must be positive");
        }
        Ok(())
    }
}

/// `(r - mean) / std` with the population standard deviation; all zeros when
/// the std is below `std_floor`. The last entry absorbs the rounding residual
/// so that the advantages sum to exactly zero in left-to-right order.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::Config(format!("a group needs at least 2 rewards, got {n}")));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if !(std >= std_floor) {
        return Ok(vec![0.0; n]);
    }
    let mut out: Vec<f64> = rewards.iter().map(|r| (r - mean) / std).collect();
    let head: f64 = out[..n - 1].iter().sum();
    out[n - 1] = -head;
    Ok(out)
}

/// `exp(d) - d - 1` with `d = logp_ref - logp_cur`.
pub fn kl_estimate(logp_cur: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_cur;
    d.exp_m1() - d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub selection: Selection,
    pub reward: f64,
    /// Log-probability under the policy that drew the sample.
    pub logp_behavior: f64,
    pub logp_reference: f64,
    pub advantage: f64,
}

/// The `N` samples of one context; the unit of one surrogate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub samples: Vec<GroupSample>,
}

impl GroupBatch {
    pub fn new(
        selections: Vec<Selection>,
        rewards: Vec<f64>,
        logp_behavior: Vec<f64>,
        logp_reference: Vec<f64>,
        std_floor: f64,
    ) -> Result<Self, GrpoError> {
        let n = selections.len();
        if rewards.len() != n || logp_behavior.len() != n || logp_reference.len() != n {
            return Err(GrpoError::LengthMismatch(format!(
                "{} selections, {} rewards, {} behavior and {} reference log-probs",
                n,
                rewards.len(),
                logp_behavior.len(),
                logp_reference.len()
            )));
        }
        let adv = advantages(&rewards, std_floor)?;
        let samples = selections
            .into_iter()
            .zip(rewards)
            .zip(logp_behavior.into_iter().zip(logp_reference))
            .zip(adv)
            .map(
                |(((selection, reward), (logp_behavior, logp_reference)), advantage)| GroupSample {
                    selection,
                    reward,
                    logp_behavior,
                    logp_reference,
                    advantage,
                },
            )
            .collect();
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateValue {
    /// Clipped surrogate minus the KL penalty.
    pub objective: f64,
    /// Mean clipped term alone.
    pub clipped: f64,
    /// Mean KL estimate.
    pub kl: f64,
    pub gradient: Vec<f64>,
}

/// Whether the clipped branch of `min(w A, clip(w) A)` is the smaller one,
/// in which case the sample contributes no gradient.
fn clip_active(w: f64, a: f64, eps: f64) -> bool {
    (a > 0.0 && w > 1.0 + eps) || (a < 0.0 && w < 1.0 - eps)
}

/// Surrogate objective and its gradient with respect to `logits`.
pub fn surrogate_at(logits: &[f64], batch: &GroupBatch, cfg: &GrpoConfig) -> SurrogateValue {
    let n = batch.len().max(1) as f64;
    let mut clipped = 0.0;
    let mut kl = 0.0;
    let mut gradient = vec![0.0; logits.len()];
    for s in &batch.samples {
        let lc = pl_log_prob(logits, &s.selection);
        let w = (lc - s.logp_behavior).exp();
        let a = s.advantage;
        let w_clip = w.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        clipped += (w * a).min(w_clip * a);
        kl += kl_estimate(lc, s.logp_reference);

        let active = clip_active(w, a, cfg.clip_eps);
        let coef = if active { 0.0 } else { a * w } - cfg.kl_beta * (1.0 - (s.logp_reference - lc).exp());
        if coef != 0.0 {
            for (g, d) in gradient.iter_mut().zip(pl_grad(logits, &s.selection)) {
                *g += coef * d / n;
            }
        }
    }
    clipped /= n;
    kl /= n;
    SurrogateValue {
        objective: clipped - cfg.kl_beta * kl,
        clipped,
        kl,
        gradient,
    }
}

pub fn surrogate(batch: &GroupBatch, policy: &AnchorGridPolicy, cfg: &GrpoConfig) -> SurrogateValue {
    surrogate_at(policy.logits(), batch, cfg)
}

/// Moves behavior log-probs so no importance ratio sits within `margin` of a
/// clip boundary, where the objective has a kink.
pub fn nudge_off_clip_boundary(batch: &mut GroupBatch, logits: &[f64], eps: f64, margin: f64) {
    for s in &mut batch.samples {
        let lc = pl_log_prob(logits, &s.selection);
        for edge in [1.0 + eps, 1.0 - eps] {
            let w = (lc - s.logp_behavior).exp();
            if (w - edge).abs() < margin {
                let target = if w >= edge { edge + margin } else { edge - margin };
                s.logp_behavior = lc - target.ln();
            }
        }
    }
}

/// Largest relative difference between the analytic surrogate gradient and
/// central finite differences with step `1e-5`. Components are compared on
/// the scale `max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check(policy: &AnchorGridPolicy, batch: &GroupBatch, cfg: &GrpoConfig) -> f64 {
    let h = 1e-5;
    let logits = policy.logits().to_vec();
    let analytic = surrogate_at(&logits, batch, cfg).gradient;
    let mut worst: f64 = 0.0;
    let mut probe = logits.clone();
    for i in 0..logits.len() {
        probe[i] = logits[i] + h;
        let up = surrogate_at(&probe, batch, cfg).objective;
        probe[i] = logits[i] - h;
        let dn = surrogate_at(&probe, batch, cfg).objective;
        probe[i] = logits[i];
        let numeric = (up - dn) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((numeric - analytic[i]).abs() / scale);
    }
    worst
}

/// Source of contexts and rewards for training.
pub trait TrainEnv: Sync {
    fn num_contexts(&self) -> usize;

    /// Reward of `output` in context `context`; `stream` identifies the
    /// sample for any randomness the environment needs.
    fn reward(&self, context: usize, output: &PolicyOutput, stream: &[u64]) -> Result<f64, GrpoError>;
}

/// Episodes over a fixed scene pool; the reward is the episode total under
/// the configured reward mode.
pub struct SceneEnv<'a> {
    scenes: &'a [Scene],
    episode: EpisodeConfig,
    seed: u64,
    seg_starts: Vec<Option<SegState>>,
}

impl<'a> SceneEnv<'a> {
    pub fn new(scenes: &'a [Scene], episode: EpisodeConfig, seed: u64) -> Result<Self, GrpoError> {
        episode.validate().map_err(|e| GrpoError::Env(e.to_string()))?;
        let seg_starts = scenes
            .iter()
            .map(|s| match episode.task {
                TaskKind::Segmentation => initial_seg_state(s, &episode, seed).map(Some),
                TaskKind::Detection => Ok(None),
            })
            .collect::<Result<_, _>>()
            .map_err(|e| GrpoError::Env(e.to_string()))?;
        Ok(Self {
            scenes,
            episode,
            seed,
            seg_starts,
        })
    }
}

impl TrainEnv for SceneEnv<'_> {
    fn num_contexts(&self) -> usize {
        self.scenes.len()
    }

    fn reward(&self, context: usize, output: &PolicyOutput, stream: &[u64]) -> Result<f64, GrpoError> {
        let scene = &self.scenes[context];
        let sample = rng::derive_seed(0, stream);
        let rec = match &self.seg_starts[context] {
            Some(start) => evaluate_segmentation(scene, start, output, &self.episode, self.seed, sample, "train"),
            None => evaluate_detection(scene, output, &self.episode, self.seed, sample, "train"),
        };
        rec.map(|r| r.reward.total).map_err(|e| GrpoError::Env(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iteration: u64,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<TrainRow>,
    pub final_policy: PolicySnapshot,
}

impl TrainReport {
    /// Mean reward over the last `window` iterations.
    pub fn final_mean_reward(&self, window: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(window.max(1))..];
        tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len().max(1) as f64
    }
}

fn draw_contexts(count: usize, pool: usize, seed: u64, iteration: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, &[rng::label::TRAIN_DRAW, iteration]);
    if count <= pool {
        rand::seq::index::sample(&mut r, pool, count).into_vec()
    } else {
        (0..count).map(|_| r.random_range(0..pool)).collect()
    }
}

fn mean_gradient(
    logits: &[f64],
    batches: &[GroupBatch],
    cfg: &GrpoConfig,
    iteration: u64,
) -> Result<(SurrogateValue, Vec<f64>), GrpoError> {
    let values: Vec<SurrogateValue> = batches.par_iter().map(|b| surrogate_at(logits, b, cfg)).collect();
    let g = values.len() as f64;
    let mut total = SurrogateValue {
        objective: 0.0,
        clipped: 0.0,
        kl: 0.0,
        gradient: vec![0.0; logits.len()],
    };
    for (group, v) in values.iter().enumerate() {
        if !v.objective.is_finite() || v.gradient.iter().any(|x| !x.is_finite()) {
            return Err(GrpoError::NonFinite {
                iteration,
                group,
                dump: serde_json::to_string_pretty(&batches[group]).unwrap_or_default(),
            });
        }
        total.objective += v.objective / g;
        total.clipped += v.clipped / g;
        total.kl += v.kl / g;
        for (t, x) in total.gradient.iter_mut().zip(&v.gradient) {
            *t += x / g;
        }
    }
    let grad = total.gradient.clone();
    Ok((total, grad))
}

/// Runs GRPO on `policy` in place. The reference policy is the policy as
/// passed in. Results depend only on `(policy, env, cfg, seed)`.
pub fn train(
    policy: &mut AnchorGridPolicy,
    env: &dyn TrainEnv,
    cfg: &GrpoConfig,
    seed: u64,
) -> Result<TrainReport, GrpoError> {
    cfg.validate()?;
    if env.num_contexts() == 0 {
        return Err(GrpoError::Config("no training contexts".into()));
    }
    let reference: ReferenceSnapshot = policy.reference();
    let mut rows = Vec::with_capacity(cfg.iterations as usize);
    for it in 0..cfg.iterations {
        let contexts = draw_contexts(cfg.scenes_per_iteration, env.num_contexts(), seed, it);
        let snapshot: &AnchorGridPolicy = policy;
        let groups: Vec<Result<GroupBatch, GrpoError>> = contexts
            .par_iter()
            .enumerate()
            .map(|(g, &ctx)| {
                let mut selections = Vec::with_capacity(cfg.group_size_n);
                let mut rewards = Vec::with_capacity(cfg.group_size_n);
                let mut behavior = Vec::with_capacity(cfg.group_size_n);
                let mut refs = Vec::with_capacity(cfg.group_size_n);
                for n in 0..cfg.group_size_n as u64 {
                    let path = [rng::label::POLICY, it, g as u64, n];
                    let mut r = rng::stream(seed, &path);
                    let (sel, out) = snapshot.sample_k(&mut r);
                    rewards.push(env.reward(ctx, &out, &path)?);
                    behavior.push(out.log_prob);
                    refs.push(reference.log_prob_indices(&sel));
                    selections.push(sel);
                }
                GroupBatch::new(selections, rewards, behavior, refs, cfg.std_floor)
            })
            .collect();
        let batches: Vec<GroupBatch> = groups.into_iter().collect::<Result<_, _>>()?;

        let all: Vec<f64> = batches
            .iter()
            .flat_map(|b| b.samples.iter().map(|s| s.reward))
            .collect();
        let mean_reward = all.iter().sum::<f64>() / all.len() as f64;
        let max_reward = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut first: Option<(SurrogateValue, f64)> = None;
        for _ in 0..cfg.inner_updates {
            let (value, grad) = mean_gradient(policy.logits(), &batches, cfg, it)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            policy.ascend(&grad, cfg.learning_rate);
            first.get_or_insert((value, norm));
        }
        let (value, grad_norm) = first.expect("at least one inner update");
        rows.push(TrainRow {
            iteration: it,
            mean_reward,
            max_reward,
            surrogate: value.objective,
            kl: value.kl,
            grad_norm,
        });
        if it % 50 == 0 {
            log::debug!("iteration {it}: mean reward {mean_reward:.4}, kl {:.5}", value.kl);
        }
    }
    Ok(TrainReport {
        rows,
        final_policy: policy.snapshot(),
    })
}
