use rand::Rng;

use super::{anchors, PolicyError, PolicyOutput, ProposalContext, SensingPolicy};
use crate::env::{Scene, SensingConfig, TaskModelConfig};
use crate::geometry::{BBox, BitMask, Frame};
use crate::rng::StreamRng;

/// `k` anchors drawn uniformly without replacement.
pub fn propose_random<R: Rng + ?Sized>(anchors: &[BBox], k: usize, rng: &mut R) -> Result<PolicyOutput, PolicyError> {
    let n = anchors.len();
    if k > n {
        return Err(PolicyError::Config(format!("cannot draw {k} of {n} anchors")));
    }
    let picks = rand::seq::index::sample(rng, n, k);
    let log_prob = (0..k).map(|i| -((n - i) as f64).ln()).sum();
    Ok(PolicyOutput {
        proposals: picks.iter().map(|i| anchors[i]).collect(),
        log_prob,
        raw_text: None,
    })
}

/// First `k` cells of a `grid_side`² tiling in raster order.
pub fn propose_grid(frame: Frame, k: usize, grid_side: u32) -> PolicyOutput {
    let g = grid_side.clamp(1, frame.shorter_side()) as u64;
    let cells = (g * g) as usize;
    if k > cells {
        log::warn!("grid of {cells} cells cannot supply {k} proposals; using {cells}");
    }
    let edge = |i: u64, extent: u32| (i * extent as u64 / g) as i64;
    let proposals = (0..k.min(cells) as u64)
        .map(|c| {
            let (col, row) = (c % g, c / g);
            BBox::new(
                edge(col, frame.width),
                edge(row, frame.height),
                edge(col + 1, frame.width) - 1,
                edge(row + 1, frame.height) - 1,
            )
            .expect("grid cells are non-empty")
        })
        .collect();
    PolicyOutput::deterministic(proposals)
}

fn greedy_cover(anchors: &[BBox], k: usize, mut gain: impl FnMut(usize, &[usize]) -> u64) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    while chosen.len() < k.min(anchors.len()) {
        let mut best: Option<(usize, u64)> = None;
        for i in 0..anchors.len() {
            if chosen.contains(&i) {
                continue;
            }
            let g = gain(i, &chosen);
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((i, g));
            }
        }
        chosen.push(best.expect("an unchosen anchor remains").0);
    }
    chosen
}

/// Greedy set cover over `anchors`. Detection counts objects that lie fully
/// inside an anchor and are detectable at its zoom; segmentation (when a mask
/// state is given) counts disagreement pixels. Ties go to the lower index.
pub fn propose_oracle_coverage(
    scene: &Scene,
    anchors: &[BBox],
    k: usize,
    sensing: &SensingConfig,
    task_model: &TaskModelConfig,
    disagreement: Option<&BitMask>,
) -> PolicyOutput {
    let chosen = match disagreement {
        Some(mask) => {
            let mut remaining = mask.clone();
            let mut last_applied = 0;
            greedy_cover(anchors, k, |i, chosen| {
                while last_applied < chosen.len() {
                    remaining.fill_box(&anchors[chosen[last_applied]], false);
                    last_applied += 1;
                }
                remaining.count_in_box(&anchors[i])
            })
        }
        None => {
            let covers: Vec<Vec<usize>> = anchors
                .iter()
                .map(|a| {
                    let s = sensing.crop_resolution as f64 / a.width().max(a.height()) as f64;
                    scene
                        .objects()
                        .iter()
                        .enumerate()
                        .filter(|(_, o)| a.contains(&o.bbox) && o.area as f64 * s * s >= task_model.min_apparent_area)
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect();
            let mut covered = vec![false; scene.objects().len()];
            let mut last_applied = 0;
            greedy_cover(anchors, k, |i, chosen| {
                while last_applied < chosen.len() {
                    for &j in &covers[chosen[last_applied]] {
                        covered[j] = true;
                    }
                    last_applied += 1;
                }
                covers[i].iter().filter(|&&j| !covered[j]).count() as u64
            })
        }
    };
    PolicyOutput::deterministic(chosen.into_iter().map(|i| anchors[i]).collect())
}

/// Tight boxes (padded by `pad` pixels) around at most `k` object groups,
/// merging the pair whose joint hull has the smallest longer side first.
/// Padded hulls that intersect are merged as well, so every object lies
/// wholly inside exactly one box.
pub fn propose_oracle_clusters(scene: &Scene, k: usize, pad: i64) -> PolicyOutput {
    let frame = scene.frame();
    let mut hulls: Vec<BBox> = scene.objects().iter().map(|o| o.bbox).collect();
    if hulls.is_empty() || k == 0 {
        return PolicyOutput::deterministic(vec![frame.full_box()].into_iter().take(k).collect());
    }
    let longer = |b: &BBox| b.width().max(b.height());
    loop {
        let padded: Vec<BBox> = hulls.iter().map(|h| h.padded_within(pad, frame)).collect();
        let touching = (0..hulls.len())
            .flat_map(|i| (i + 1..hulls.len()).map(move |j| (i, j)))
            .find(|&(i, j)| padded[i].intersection(&padded[j]).is_some());
        let pair = match touching {
            Some(p) => p,
            None if hulls.len() > k => {
                let mut best = (0, 1, u64::MAX);
                for i in 0..hulls.len() {
                    for j in i + 1..hulls.len() {
                        let m = longer(&hulls[i].union_hull(&hulls[j]));
                        if m < best.2 {
                            best = (i, j, m);
                        }
                    }
                }
                (best.0, best.1)
            }
            None => break,
        };
        let merged = hulls[pair.0].union_hull(&hulls[pair.1]);
        hulls.swap_remove(pair.1);
        hulls[pair.0] = merged;
    }
    let mut out: Vec<BBox> = hulls.iter().map(|h| h.padded_within(pad, frame)).collect();
    out.sort();
    PolicyOutput::deterministic(out)
}

/// Uniform anchor sampler.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub r_min: f64,
    pub r_max: f64,
}

impl SensingPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn propose(&self, ctx: &ProposalContext<'_>, rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        propose_random(&anchors(ctx.scene.frame(), self.r_min, self.r_max), ctx.k, rng)
    }
}

/// Raster-order tiling, the exhaustive-search baseline.
#[derive(Debug, Clone)]
pub struct GridPolicy {
    pub grid_side: u32,
}

impl SensingPolicy for GridPolicy {
    fn name(&self) -> String {
        format!("grid{}", self.grid_side)
    }

    fn propose(&self, ctx: &ProposalContext<'_>, _rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        Ok(propose_grid(ctx.scene.frame(), ctx.k, self.grid_side))
    }
}

/// Greedy anchor cover with access to the annotations.
#[derive(Debug, Clone)]
pub struct OracleCoveragePolicy {
    pub r_min: f64,
    pub r_max: f64,
    pub sensing: SensingConfig,
    pub task_model: TaskModelConfig,
}

impl SensingPolicy for OracleCoveragePolicy {
    fn name(&self) -> String {
        "oracle-coverage".into()
    }

    fn propose(&self, ctx: &ProposalContext<'_>, _rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        let anchors = anchors(ctx.scene.frame(), self.r_min, self.r_max);
        let disagreement = ctx.seg_state.map(|s| s.disagreement());
        Ok(propose_oracle_coverage(
            ctx.scene,
            &anchors,
            ctx.k,
            &self.sensing,
            &self.task_model,
            disagreement.as_ref(),
        ))
    }
}

/// Padded hulls around object groups.
#[derive(Debug, Clone)]
pub struct OracleClusterPolicy {
    pub pad: i64,
}

impl SensingPolicy for OracleClusterPolicy {
    fn name(&self) -> String {
        "oracle-clusters".into()
    }

    fn propose(&self, ctx: &ProposalContext<'_>, _rng: &mut StreamRng) -> Result<PolicyOutput, PolicyError> {
        Ok(propose_oracle_clusters(ctx.scene, ctx.k, self.pad))
    }
}
