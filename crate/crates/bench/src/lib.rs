//! Benchmark fixtures shared by the criterion targets.

use activezoom::config::RunConfig;
use activezoom::env::{generate_scenes, Scene};
use activezoom::metrics::{Detection, GroundTruth};
use activezoom::BBox;

/// Scenes from the detection benchmark.
pub fn detection_scenes(count: usize) -> (RunConfig, Vec<Scene>) {
    let cfg = RunConfig::detection_benchmark();
    let scenes = generate_scenes(&cfg.scenes, cfg.seed, count).expect("benchmark scenes generate");
    (cfg, scenes)
}

/// A `n`-by-`n` lattice of ground truth and slightly shifted predictions.
pub fn lattice(n: i64) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let g = BBox::new(i * 20, j * 20, i * 20 + 9, j * 20 + 9).expect("ordered");
            let p = BBox::new(i * 20 + 1, j * 20, i * 20 + 10, j * 20 + 9).expect("ordered");
            gts.push(GroundTruth::new(g, "coin"));
            preds.push(Detection::new(p, "coin", ((i * n + j) % 7) as f64 / 7.0));
        }
    }
    (preds, gts)
}
