use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{anchors, PolicyError, PolicyOutput, ProposalContext, SensingPolicy};
use crate::geometry::{BBox, Frame};
use crate::heuristic::HeuristicConfig;
use crate::rng::StreamRng;

/// Ordered anchor indices.
pub type Selection = Vec<usize>;

/// Plackett–Luce distribution over ordered `k`-subsets of a fixed anchor set,
/// one logit per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGridPolicy {
    frame: Frame,
    anchors: Vec<BBox>,
    index: HashMap<BBox, usize>,
    logits: Vec<f64>,
    k: usize,
    greedy: bool,
}

fn log_sum_exp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-probability of an ordered selection under `logits`.
pub(crate) fn pl_log_prob(logits: &[f64], selection: &[usize]) -> f64 {
    let mut remaining = vec![true; logits.len()];
    let mut total = 0.0;
    for &i in selection {
        let lse = log_sum_exp(logits.iter().zip(&remaining).filter(|(_, r)| **r).map(|(l, _)| l));
        total += logits[i] - lse;
        remaining[i] = false;
    }
    total
}

/// Gradient of [`pl_log_prob`] with respect to every logit.
pub(crate) fn pl_grad(logits: &[f64], selection: &[usize]) -> Vec<f64> {
    let mut remaining = vec![true; logits.len()];
    let mut grad = vec![0.0; logits.len()];
    for &i in selection {
        let lse = log_sum_exp(logits.iter().zip(&remaining).filter(|(_, r)| **r).map(|(l, _)| l));
        for (j, g) in grad.iter_mut().enumerate() {
            if remaining[j] {
                *g -= (logits[j] - lse).exp();
            }
        }
        grad[i] += 1.0;
        remaining[i] = false;
    }
    grad
}

impl AnchorGridPolicy {
    pub fn new(frame: Frame, anchors: Vec<BBox>, k: usize) -> Result<Self, PolicyError> {
        if k == 0 || k > anchors.len() {
            return Err(PolicyError::Config(format!(
                "k = {k} must lie in 1..={} (anchor count)",
                anchors.len()
            )));
        }
        let mut index = HashMap::with_capacity(anchors.len());
        for (i, a) in anchors.iter().enumerate() {
            if !a.in_frame(frame) {
                return Err(PolicyError::Config(format!("anchor {a} lies outside the frame")));
            }
            if index.insert(*a, i).is_some() {
                return Err(PolicyError::Config(format!("anchor {a} is duplicated")));
            }
        }
        Ok(Self {
            frame,
            logits: vec![0.0; anchors.len()],
            anchors,
            index,
            k,
            greedy: false,
        })
    }

    /// Uniform policy over the default anchor grid for `frame`.
    pub fn for_frame(frame: Frame, heuristic: &HeuristicConfig, k: usize) -> Result<Self, PolicyError> {
        Self::new(frame, anchors(frame, heuristic.r_min, heuristic.r_max), k)
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_logits(&mut self, logits: Vec<f64>) -> Result<(), PolicyError> {
        if logits.len() != self.anchors.len() || logits.iter().any(|l| !l.is_finite()) {
            return Err(PolicyError::Config("logits must be finite, one per anchor".into()));
        }
        self.logits = logits;
        Ok(())
    }

    /// Adds `step * direction` to the logits.
    pub fn ascend(&mut self, direction: &[f64], step: f64) {
        for (l, d) in self.logits.iter_mut().zip(direction) {
            *l += step * d;
        }
    }

    /// Switches `propose` between sampling and top-`k` decoding.
    pub fn with_greedy(mut self, greedy: bool) -> Self {
        self.greedy = greedy;
        self
    }

    pub fn is_greedy(&self) -> bool {
        self.greedy
    }

    /// Softmax over all anchors.
    pub fn probabilities(&self) -> Vec<f64> {
        let lse = log_sum_exp(self.logits.iter());
        self.logits.iter().map(|l| (l - lse).exp()).collect()
    }

    fn output(&self, selection: &[usize]) -> PolicyOutput {
        PolicyOutput {
            proposals: selection.iter().map(|&i| self.anchors[i]).collect(),
            log_prob: self.log_prob_indices(selection),
            raw_text: None,
        }
    }

    /// Sequential softmax sampling without replacement.
    pub fn sample_k<R: Rng + ?Sized>(&self, rng: &mut R) -> (Selection, PolicyOutput) {
        let mut remaining = vec![true; self.anchors.len()];
        let mut selection = Vec::with_capacity(self.k);
        for _ in 0..self.k {
            let live = || self.logits.iter().zip(&remaining).filter(|(_, r)| **r).map(|(l, _)| l);
            let lse = log_sum_exp(live());
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = None;
            for (j, l) in self.logits.iter().enumerate() {
                if !remaining[j] {
                    continue;
                }
                acc += (l - lse).exp();
                chosen = Some(j);
                if u < acc {
                    break;
                }
            }
            let j = chosen.expect("k never exceeds the anchor count");
            remaining[j] = false;
            selection.push(j);
        }
        let out = self.output(&selection);
        (selection, out)
    }

    /// Top-`k` anchors by logit, ties to the lower index.
    pub fn greedy_selection(&self) -> Selection {
        let mut order: Vec<usize> = (0..self.anchors.len()).collect();
        order.sort_by(|&a, &b| self.logits[b].total_cmp(&self.logits[a]).then(a.cmp(&b)));
        order.truncate(self.k);
        order
    }

    pub fn indices_of(&self, proposals: &[BBox]) -> Result<Selection, PolicyError> {
        let mut seen = vec![false; self.anchors.len()];
        proposals
            .iter()
            .map(|b| {
                let i = *self.index.get(b).ok_or(PolicyError::UnknownAnchor(*b))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(PolicyError::RepeatedAnchor(i));
                }
                Ok(i)
            })
            .collect()
    }

    pub fn log_prob_indices(&self, selection: &[usize]) -> f64 {
        pl_log_prob(&self.logits, selection)
    }

    pub fn log_prob_of(&self, proposals: &[BBox]) -> Result<f64, PolicyError> {
        Ok(self.log_prob_indices(&self.indices_of(proposals)?))
    }

    pub fn grad_log_prob_indices(&self, selection: &[usize]) -> Vec<f64> {
        pl_grad(&self.logits, selection)
    }

    pub fn grad_log_prob(&self, proposals: &[BBox]) -> Result<Vec<f64>, PolicyError> {
        Ok(self.grad_log_prob_indices(&self.indices_of(proposals)?))
    }

    pub fn reference(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            logits: self.logits.clone(),
        }
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            width: self.frame.width,
            height: self.frame.height,
            k: self.k,
            anchors: self.anchors.clone(),
            logits: self.logits.clone(),
        }
    }

    pub fn from_snapshot(s: &PolicySnapshot) -> Result<Self, PolicyError> {
        let frame = Frame::new(s.width, s.height).map_err(|e| PolicyError::Config(e.to_string()))?;
        let mut p = Self::new(frame, s.anchors.clone(), s.k)?;
        p.set_logits(s.logits.clone())?;
        Ok(p)
    }
}

impl SensingPolicy for AnchorGridPolicy {
    fn name(&self) -> String {
        if self.greedy { "trained-greedy" } else { "trained" }.to_string()
    }

    fn propose(&self, ctx: &ProposalContext<'_>, rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        let frame = ctx.scene.frame();
        if frame != self.frame {
            return Err(PolicyError::FrameMismatch {
                expected_w: self.frame.width,
                expected_h: self.frame.height,
                got_w: frame.width,
                got_h: frame.height,
            });
        }
        Ok(if self.greedy {
            self.output(&self.greedy_selection())
        } else {
            self.sample_k(rng).1
        })
    }
}

/// Frozen logits of the reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot {
    logits: Vec<f64>,
}

impl ReferenceSnapshot {
    pub fn log_prob_indices(&self, selection: &[usize]) -> f64 {
        pl_log_prob(&self.logits, selection)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Serialized policy: frame, anchors and logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub width: u32,
    pub height: u32,
    pub k: usize,
    pub anchors: Vec<BBox>,
    pub logits: Vec<f64>,
}
