//! Brute-force reference implementations used to cross-check the library.
//!
//! Everything here counts pixels or enumerates assignments directly and does
//! not call into the geometry, heuristic or metrics code it is compared with.
#![allow(dead_code)]

use std::collections::BTreeSet;

use activezoom::geometry::{BBox, BitMask, Frame};
use activezoom::heuristic::{heuristic_total, CoverageMode, HeuristicConfig, HeuristicInputs, RewardBreakdown};
use activezoom::metrics::{ap_ar_at, coco_eval, Detection, GroundTruth, ImageEval, SizeBuckets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pixels(b: &BBox) -> BTreeSet<(i64, i64)> {
    let mut out = BTreeSet::new();
    for y in b.y1()..=b.y2() {
        for x in b.x1()..=b.x2() {
            out.insert((x, y));
        }
    }
    out
}

pub fn raster_iou(a: &BBox, b: &BBox) -> f64 {
    let (pa, pb) = (pixels(a), pixels(b));
    let inter = pa.intersection(&pb).count() as u64;
    if inter == 0 {
        return 0.0;
    }
    let union = pa.union(&pb).count() as u64;
    inter as f64 / union as f64
}

pub fn raster_area_ratio(b: &BBox, w: u32, h: u32) -> f64 {
    pixels(b).len() as f64 / (w as u64 * h as u64) as f64
}

fn mask_count(m: &BitMask) -> u64 {
    let mut n = 0;
    for y in 0..m.height() {
        for x in 0..m.width() {
            n += m.get(x, y) as u64;
        }
    }
    n
}

fn mask_inter(a: &BitMask, b: &BitMask) -> u64 {
    let mut n = 0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            n += (a.get(x, y) && b.get(x, y)) as u64;
        }
    }
    n
}

pub fn raster_density(b: &BBox, m: &BitMask) -> f64 {
    let px = pixels(b);
    let set = px.iter().filter(|(x, y)| m.get(*x as u32, *y as u32)).count();
    set as f64 / px.len() as f64
}

pub fn raster_mask_iou(a: &BitMask, b: &BitMask) -> f64 {
    let inter = mask_inter(a, b);
    let union = mask_count(a) + mask_count(b) - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn raster_mask_dice(a: &BitMask, b: &BitMask) -> f64 {
    let total = mask_count(a) + mask_count(b);
    if total == 0 {
        1.0
    } else {
        2.0 * mask_inter(a, b) as f64 / total as f64
    }
}

/// One randomly drawn reward evaluation problem.
#[derive(Debug, Clone)]
pub struct RewardCase {
    pub frame: Frame,
    pub format_ok: bool,
    pub boxes: Vec<BBox>,
    pub gt_boxes: Vec<BBox>,
    pub gt_mask: Option<BitMask>,
    pub pred_mask: Option<BitMask>,
    pub cfg: HeuristicConfig,
}

impl RewardCase {
    pub fn inputs(&self) -> HeuristicInputs<'_> {
        HeuristicInputs {
            format_ok: self.format_ok,
            boxes: &self.boxes,
            frame: self.frame,
            gt_boxes: &self.gt_boxes,
            gt_mask: self.gt_mask.as_ref(),
            pred_mask: self.pred_mask.as_ref(),
        }
    }
}

pub fn random_box<R: Rng>(rng: &mut R, w: u32, h: u32) -> BBox {
    let x1 = rng.random_range(0..w as i64);
    let y1 = rng.random_range(0..h as i64);
    let x2 = rng.random_range(x1..w as i64);
    let y2 = rng.random_range(y1..h as i64);
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// A box at most `max_side` pixels on a side.
pub fn random_small_box<R: Rng>(rng: &mut R, w: u32, h: u32, max_side: i64) -> BBox {
    let x1 = rng.random_range(0..w as i64);
    let y1 = rng.random_range(0..h as i64);
    let x2 = (x1 + rng.random_range(0..max_side)).min(w as i64 - 1);
    let y2 = (y1 + rng.random_range(0..max_side)).min(h as i64 - 1);
    BBox::new(x1, y1, x2, y2).unwrap()
}

fn random_mask<R: Rng>(rng: &mut R, frame: Frame) -> BitMask {
    // Union of a few rectangles plus salt noise, so densities take many values.
    let mut m = BitMask::zeros(frame);
    for _ in 0..rng.random_range(0..4) {
        m.fill_box(&random_box(rng, frame.width, frame.height), true);
    }
    let p = rng.random_range(0.0..0.2);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if rng.random_bool(p) {
                m.set(x, y, !m.get(x, y));
            }
        }
    }
    m
}

pub fn random_reward_case<R: Rng>(rng: &mut R) -> RewardCase {
    let frame = Frame::new(rng.random_range(4..=64), rng.random_range(4..=64)).unwrap();
    let (w, h) = (frame.width, frame.height);
    let n_boxes = rng.random_range(0..=4);
    let boxes: Vec<BBox> = (0..n_boxes)
        .map(|_| {
            if rng.random_bool(0.5) {
                random_box(rng, w, h)
            } else {
                random_small_box(rng, w, h, 12)
            }
        })
        .collect();
    let gt_boxes = (0..rng.random_range(0..=6))
        .map(|_| random_small_box(rng, w, h, 10))
        .collect();
    let gt_mask = rng.random_bool(0.5).then(|| random_mask(rng, frame));
    let pred_mask = (gt_mask.is_some() && rng.random_bool(0.5)).then(|| random_mask(rng, frame));
    let mut cfg = HeuristicConfig {
        tau: [0.0, 0.1, 0.3, 0.5][rng.random_range(0..4)],
        r_min: [0.001, 0.01, 0.05][rng.random_range(0..3)],
        r_max: [0.25, 0.5, 1.0][rng.random_range(0..3)],
        theta: [0.0, 0.25, 0.5, 1.0][rng.random_range(0..4)],
        delta: [0.1, 0.5, 1.0][rng.random_range(0..3)],
        lambda: [1.0, 1.0, 1.0, 1.0],
        mask_to_mask_dice: rng.random_bool(0.5),
        ..HeuristicConfig::default()
    };
    if rng.random_bool(0.3) {
        cfg.lambda = std::array::from_fn(|_| rng.random_range(0..4) as f64 * 0.5);
    }
    if rng.random_bool(0.3) {
        cfg.coverage_mode = CoverageMode::Mix;
        cfg.coverage_mix.mask = rng.random_range(0..3) as f64;
        cfg.coverage_mix.gt_box = rng.random_range(0..3) as f64;
        cfg.coverage_mix.mask_to_mask = rng.random_range(0..3) as f64;
    }
    RewardCase {
        frame,
        format_ok: rng.random_bool(0.85),
        boxes,
        gt_boxes,
        gt_mask,
        pred_mask,
        cfg,
    }
}

fn oracle_coverage(c: &RewardCase) -> f64 {
    let cfg = &c.cfg;
    let cov_mask = |gt: &BitMask| {
        let hit = c.boxes.iter().filter(|b| raster_density(b, gt) >= cfg.theta).count();
        hit as f64 / c.boxes.len() as f64
    };
    let cov_gt = || {
        if c.gt_boxes.is_empty() {
            return 1.0;
        }
        let hit = c
            .gt_boxes
            .iter()
            .filter(|g| c.boxes.iter().any(|b| raster_iou(b, g) >= cfg.delta))
            .count();
        hit as f64 / c.gt_boxes.len() as f64
    };
    let cov_mm = |p: &BitMask, g: &BitMask| {
        if cfg.mask_to_mask_dice {
            raster_mask_dice(p, g)
        } else {
            raster_mask_iou(p, g)
        }
    };
    match cfg.coverage_mode {
        CoverageMode::Auto => match (&c.pred_mask, &c.gt_mask) {
            (Some(p), Some(g)) => cov_mm(p, g),
            (None, Some(g)) => cov_mask(g),
            _ => cov_gt(),
        },
        CoverageMode::Mix => {
            let mix = cfg.coverage_mix;
            let mut num = mix.gt_box * cov_gt();
            let mut den = mix.gt_box;
            if let Some(g) = &c.gt_mask {
                num += mix.mask * cov_mask(g);
                den += mix.mask;
                if let Some(p) = &c.pred_mask {
                    num += mix.mask_to_mask * cov_mm(p, g);
                    den += mix.mask_to_mask;
                }
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        }
    }
}

/// Heuristic breakdown computed by pixel counting.
pub fn oracle_breakdown(c: &RewardCase) -> RewardBreakdown {
    if !c.format_ok || c.boxes.is_empty() {
        return RewardBreakdown::default();
    }
    let cfg = &c.cfg;
    let (w, h) = (c.frame.width, c.frame.height);
    let mut no_overlap = 1.0;
    for i in 0..c.boxes.len() {
        for j in 0..c.boxes.len() {
            if i != j && raster_iou(&c.boxes[i], &c.boxes[j]) > cfg.tau {
                no_overlap = 0.0;
            }
        }
    }
    let area_ok = c.boxes.iter().all(|b| {
        let r = raster_area_ratio(b, w, h);
        cfg.r_min <= r && r <= cfg.r_max
    });
    let comps = [1.0, no_overlap, if area_ok { 1.0 } else { 0.0 }, oracle_coverage(c)];
    let total: f64 = cfg.lambda.iter().zip(comps).map(|(l, v)| l * v).sum();
    RewardBreakdown {
        r_format: comps[0],
        r_no_overlap: comps[1],
        r_area: comps[2],
        r_coverage: comps[3],
        heuristic_total: total,
        r_task: 0.0,
        total,
    }
}

/// Runs the heuristic oracle comparison on `count` random cases.
pub fn reward_oracle_suite(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let case = random_reward_case(&mut rng);
        let got = heuristic_total(&case.inputs(), &case.cfg).map_err(|e| format!("case {i}: {e}"))?;
        let want = oracle_breakdown(&case);
        if got != want {
            return Err(format!("case {i}: library {got:?} != oracle {want:?}\n{case:?}"));
        }
    }
    Ok(())
}

/// Per-prediction key for the score-greedy order: the IoU of the match and
/// a preference for lower ground-truth indices among equal IoUs.
type Key = Vec<(f64, i64)>;

fn enumerate_best(
    order: &[usize],
    pos: usize,
    table: &[Vec<Option<f64>>],
    used: &mut Vec<bool>,
    current: &mut Vec<Option<usize>>,
    key: &mut Key,
    best: &mut Option<(Key, Vec<Option<usize>>)>,
) {
    if pos == order.len() {
        if best.as_ref().is_none_or(|(k, _)| key_gt(key, k)) {
            *best = Some((key.clone(), current.clone()));
        }
        return;
    }
    let p = order[pos];
    for g in 0..used.len() {
        if used[g] {
            continue;
        }
        if let Some(v) = table[p][g] {
            used[g] = true;
            current[p] = Some(g);
            key.push((v, -(g as i64)));
            enumerate_best(order, pos + 1, table, used, current, key, best);
            key.pop();
            current[p] = None;
            used[g] = false;
        }
    }
    key.push((-1.0, 0));
    enumerate_best(order, pos + 1, table, used, current, key, best);
    key.pop();
}

fn key_gt(a: &Key, b: &Key) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x.0 != y.0 {
            return x.0 > y.0;
        }
        if x.1 != y.1 {
            return x.1 > y.1;
        }
    }
    false
}

/// Enumerates every one-to-one same-category assignment with IoU at least
/// `thr` and returns the one a score-ordered greedy matcher would pick: the
/// lexicographically best match quality in score order.
pub fn exhaustive_assignment(preds: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap().then(a.cmp(&b)));
    let table: Vec<Vec<Option<f64>>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| {
                    let v = raster_iou(&p.bbox, &g.bbox);
                    (p.category == g.category && v >= thr).then_some(v)
                })
                .collect()
        })
        .collect();
    let mut best = None;
    enumerate_best(
        &order,
        0,
        &table,
        &mut vec![false; gts.len()],
        &mut vec![None; preds.len()],
        &mut Vec::new(),
        &mut best,
    );
    best.map(|(_, a)| a).unwrap_or_default()
}

/// AP (101-point, maximum precision at recall at least r) and AR per
/// category from the exhaustive assignment, macro-averaged over categories
/// that have ground truth.
pub fn oracle_ap_ar(preds: &[Detection], gts: &[GroundTruth], thr: f64) -> (f64, f64) {
    let assignment = exhaustive_assignment(preds, gts, thr);
    let cats: BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).collect();
    if cats.is_empty() {
        return if preds.is_empty() { (1.0, 1.0) } else { (0.0, 0.0) };
    }
    let mut aps = Vec::new();
    let mut ars = Vec::new();
    for cat in cats {
        let npos = gts.iter().filter(|g| g.category == cat).count() as f64;
        let mut ranked: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].category == cat).collect();
        ranked.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap().then(a.cmp(&b)));
        let mut curve = Vec::new();
        let (mut tp, mut fp) = (0.0, 0.0);
        for &i in &ranked {
            if assignment[i].is_some() {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            curve.push((tp / npos, tp / (tp + fp)));
        }
        let mut ap = 0.0;
        for step in 0..=100 {
            let r = step as f64 / 100.0;
            let p = curve
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, prec)| *prec)
                .fold(0.0, f64::max);
            ap += p;
        }
        aps.push(ap / 101.0);
        ars.push(curve.last().map_or(0.0, |c| c.0));
    }
    let n = aps.len() as f64;
    (aps.iter().sum::<f64>() / n, ars.iter().sum::<f64>() / n)
}

pub fn random_detection_case<R: Rng>(rng: &mut R) -> (Vec<Detection>, Vec<GroundTruth>, f64) {
    let (w, h) = (24, 24);
    let cats = ["a", "b"];
    let n_cats = rng.random_range(1..=2);
    let gts: Vec<GroundTruth> = (0..rng.random_range(0..=6))
        .map(|_| GroundTruth::new(random_small_box(rng, w, h, 8), cats[rng.random_range(0..n_cats)]))
        .collect();
    let preds = (0..rng.random_range(0..=6))
        .map(|_| {
            // Mostly perturbed copies of ground truth, so matches are common.
            let bbox = match gts.get(rng.random_range(0..gts.len().max(1))) {
                Some(g) if rng.random_bool(0.75) => {
                    let mut j = |v: i64, lim: u32| (v + rng.random_range(-2..=2)).clamp(0, lim as i64 - 1);
                    let (x1, x2) = (j(g.bbox.x1(), w), j(g.bbox.x2(), w));
                    let (y1, y2) = (j(g.bbox.y1(), h), j(g.bbox.y2(), h));
                    BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)).unwrap()
                }
                _ => random_small_box(rng, w, h, 8),
            };
            // Coarse scores so ties occur.
            let score = rng.random_range(1..=5) as f64 / 5.0;
            Detection::new(bbox, cats[rng.random_range(0..n_cats)], score)
        })
        .collect();
    let thr = [0.1, 0.3, 0.5, 0.75][rng.random_range(0..4)];
    (preds, gts, thr)
}

/// AP/AR against the exhaustive oracle, plus the COCO mean identity.
pub fn metric_oracle_suite(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let (preds, gts, thr) = random_detection_case(&mut rng);
        let got = ap_ar_at(&preds, &gts, thr);
        let want = oracle_ap_ar(&preds, &gts, thr);
        if got != want {
            return Err(format!(
                "case {i} at {thr}: library {got:?} != oracle {want:?}\n{preds:?}\n{gts:?}"
            ));
        }
        let eval = coco_eval(
            &[ImageEval {
                preds: &preds,
                gts: &gts,
            }],
            SizeBuckets::default(),
        );
        let mean = eval.ap_by_threshold.values().sum::<f64>() / 10.0;
        if eval.ap_by_threshold.len() != 10 || eval.coco_ap != mean {
            return Err(format!("case {i}: coco_ap {} != mean {mean}", eval.coco_ap));
        }
    }
    Ok(())
}
