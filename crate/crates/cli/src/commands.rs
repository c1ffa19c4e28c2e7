//! Subcommand implementations. Each writes its report files and returns a
//! summary that the binary prints as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use activezoom::config::{PolicyKind, RunConfig};
use activezoom::dataio::{self, DataError, SelectionRule, SMALL_AREA};
use activezoom::env::{
    evaluate_detection, evaluate_segmentation, generate_scenes, initial_observation, initial_seg_state, run_episode,
    EnvError, EpisodeConfig, EpisodeRecord, Scene,
};
use activezoom::grpo::{train, GrpoError, SceneEnv, TrainRow};
use activezoom::metrics::{ap_ar_images, coco_eval, AreaRange, EvalResult, ImageEval, RewardMode};
use activezoom::policy::{
    ExternalPolicy, GridPolicy, OracleClusterPolicy, OracleCoveragePolicy, PolicySnapshot, RandomPolicy,
};
use activezoom::response::parse_and_validate;
use activezoom::{AnchorGridPolicy, BBox, Frame, GroundTruth, PolicyOutput, RewardBreakdown, SensingPolicy, TaskKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{plot, settings, CliError};

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn env_err(e: EnvError) -> CliError {
    match e {
        EnvError::MissingMask(_) | EnvError::Scene(_) => CliError::Data(e.to_string()),
        EnvError::Config(_) | EnvError::Generation(_) => CliError::Usage(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn header(command: &str, cfg: &RunConfig) -> Vec<String> {
    vec![
        format!("activezoom {} {command}", env!("CARGO_PKG_VERSION")),
        settings::to_toml(cfg),
    ]
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Scenes from a file, or generated from the configuration.
pub fn load_or_generate(cfg: &RunConfig, scenes: Option<&Path>) -> Result<Vec<Scene>, CliError> {
    match scenes {
        Some(p) => Ok(dataio::load_scenes(p)?),
        None => generate_scenes(&cfg.scenes, cfg.seed, cfg.num_scenes).map_err(env_err),
    }
}

fn common_frame(scenes: &[Scene]) -> Result<Frame, CliError> {
    let first = scenes
        .first()
        .ok_or_else(|| CliError::Data("no scenes".into()))?
        .frame();
    if let Some(s) = scenes.iter().find(|s| s.frame() != first) {
        return Err(CliError::Data(format!(
            "scene {} is {}x{}, expected {}x{}",
            s.scene_id(),
            s.frame().width,
            s.frame().height,
            first.width,
            first.height
        )));
    }
    Ok(first)
}

// ---------------------------------------------------------------- gen-scenes

#[derive(Debug, Clone, Default)]
pub struct GenArgs {
    pub out: PathBuf,
    /// Import COCO annotations instead of generating.
    pub coco: Option<PathBuf>,
    pub rule: Option<SelectionRule>,
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub scenes: usize,
    pub objects: usize,
    pub small_objects: usize,
    pub categories: Vec<String>,
}

pub fn cmd_gen_scenes(cfg: &RunConfig, args: &GenArgs) -> Result<GenSummary, CliError> {
    let scenes = match &args.coco {
        Some(path) => {
            let all = dataio::import_coco(path)?;
            dataio::select_scenes(&all, args.rule.unwrap_or_default(), args.cap, cfg.seed)
        }
        None => generate_scenes(&cfg.scenes, cfg.seed, cfg.num_scenes).map_err(env_err)?,
    };
    dataio::save_scenes(&args.out, &scenes)?;
    let objects = scenes.iter().map(|s| s.objects().len()).sum();
    let small_objects = scenes
        .iter()
        .flat_map(|s| s.objects())
        .filter(|o| o.ground_truth().area < SMALL_AREA)
        .count();
    let mut categories: Vec<String> = scenes
        .iter()
        .flat_map(|s| s.objects().iter().map(|o| o.category.clone()))
        .collect();
    categories.sort();
    categories.dedup();
    Ok(GenSummary {
        scenes: scenes.len(),
        objects,
        small_objects,
        categories,
    })
}

// ---------------------------------------------------------------------- eval

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub scenes: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    /// Episodes per scene; only stochastic policies differ between samples.
    pub samples: u64,
    pub out: PathBuf,
    pub plot: bool,
}

/// Per-episode CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scene_id: u64,
    pub sample_index: u64,
    pub policy: String,
    pub format_ok: bool,
    pub actions: usize,
    pub r_format: f64,
    pub r_no_overlap: f64,
    pub r_area: f64,
    pub r_coverage: f64,
    pub heuristic_total: f64,
    pub r_task: f64,
    pub total: f64,
    pub ap50: Option<f64>,
    pub ar50: Option<f64>,
    pub final_miou: Option<f64>,
}

impl From<&EpisodeRecord> for EpisodeRow {
    fn from(r: &EpisodeRecord) -> Self {
        Self {
            scene_id: r.scene_id,
            sample_index: r.sample_index,
            policy: r.policy.clone(),
            format_ok: r.format_ok,
            actions: r.actions.len(),
            r_format: r.reward.r_format,
            r_no_overlap: r.reward.r_no_overlap,
            r_area: r.reward.r_area,
            r_coverage: r.reward.r_coverage,
            heuristic_total: r.reward.heuristic_total,
            r_task: r.reward.r_task,
            total: r.reward.total,
            ap50: r.ap50,
            ar50: r.ar50,
            final_miou: r.miou_trajectory.last().copied(),
        }
    }
}

/// Mean task reward after the first `budget` sensing steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: u32,
    pub mean_task_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub policy: String,
    pub task: TaskKind,
    pub reward_mode: RewardMode,
    pub seed: u64,
    pub scenes: usize,
    pub episodes: usize,
    pub format_ok_rate: f64,
    pub mean_total: f64,
    pub std_total: f64,
    pub mean_heuristic: f64,
    pub mean_task: f64,
    pub iou_thr: f64,
    /// Detection AP/AR at `iou_thr`, pooled over all episodes.
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub coco: Option<EvalResult>,
    pub mean_final_miou: Option<f64>,
    pub budget_curve: Vec<BudgetPoint>,
}

pub fn build_policy(cfg: &RunConfig, snapshot: Option<&Path>) -> Result<Box<dyn SensingPolicy>, CliError> {
    let h = &cfg.episode.heuristic;
    Ok(match cfg.eval.policy {
        PolicyKind::Random => Box::new(RandomPolicy {
            r_min: h.r_min,
            r_max: h.r_max,
        }),
        PolicyKind::Grid => Box::new(GridPolicy {
            grid_side: cfg.eval.grid_side,
        }),
        PolicyKind::Oracle => match cfg.episode.task {
            TaskKind::Detection => Box::new(OracleClusterPolicy {
                pad: cfg.eval.oracle_pad,
            }),
            TaskKind::Segmentation => Box::new(OracleCoveragePolicy {
                r_min: h.r_min,
                r_max: h.r_max,
                sensing: cfg.episode.sensing.clone(),
                task_model: cfg.episode.task_model.clone(),
            }),
        },
        PolicyKind::Trained => {
            let path = snapshot.ok_or_else(|| CliError::Usage("--policy trained needs --snapshot".into()))?;
            let snap = load_snapshot(path)?;
            let policy = AnchorGridPolicy::from_snapshot(&snap).map_err(|e| CliError::Data(e.to_string()))?;
            Box::new(policy.with_greedy(cfg.eval.greedy))
        }
        PolicyKind::External => {
            Box::new(ExternalPolicy::new(cfg.endpoint.clone()).map_err(|e| CliError::Usage(e.to_string()))?)
        }
    })
}

pub fn load_snapshot(path: &Path) -> Result<PolicySnapshot, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Runs `samples` episodes per scene, in scene-major order.
pub fn run_episodes(
    scenes: &[Scene],
    policy: &dyn SensingPolicy,
    episode: &EpisodeConfig,
    seed: u64,
    samples: u64,
) -> Result<Vec<EpisodeRecord>, CliError> {
    let jobs: Vec<(usize, u64)> = (0..scenes.len())
        .flat_map(|i| (0..samples).map(move |s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, s)| run_episode(&scenes[i], policy, episode, seed, s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(env_err)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn budget_curve(
    scenes: &[Scene],
    records: &[EpisodeRecord],
    episode: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<BudgetPoint>, CliError> {
    let k = episode.sensing.budget_k;
    let by_id = |id: u64| {
        scenes
            .iter()
            .find(|s| s.scene_id() == id)
            .expect("record scene is loaded")
    };
    (0..=k)
        .map(|b| {
            let values: Vec<f64> = match episode.task {
                TaskKind::Segmentation => records
                    .iter()
                    .map(|r| r.miou_trajectory[(b as usize).min(r.miou_trajectory.len() - 1)])
                    .collect(),
                TaskKind::Detection => records
                    .par_iter()
                    .map(|r| {
                        let n = (b as usize).min(r.actions.len());
                        let out = PolicyOutput::deterministic(r.actions[..n].to_vec());
                        evaluate_detection(by_id(r.scene_id), &out, episode, seed, r.sample_index, &r.policy)
                            .map(|rec| rec.reward.r_task)
                    })
                    .collect::<Result<_, _>>()
                    .map_err(env_err)?,
            };
            Ok(BudgetPoint {
                budget: b,
                mean_task_reward: mean(values.into_iter()),
            })
        })
        .collect()
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let scenes = load_or_generate(cfg, args.scenes.as_deref())?;
    let policy = build_policy(cfg, args.snapshot.as_deref())?;
    let records = run_episodes(&scenes, policy.as_ref(), &cfg.episode, cfg.seed, args.samples.max(1))?;
    if cfg.eval.policy == PolicyKind::External
        && !records.is_empty()
        && records.iter().all(|r| r.raw_text.as_deref() == Some(""))
    {
        return Err(CliError::Runtime(format!(
            "no usable reply from endpoint {}",
            cfg.endpoint.base_url
        )));
    }

    ensure_dir(&args.out)?;
    let rows: Vec<EpisodeRow> = records.iter().map(EpisodeRow::from).collect();
    dataio::write_csv(&args.out.join("episodes.csv"), &header("eval", cfg), &rows)?;
    dataio::save_episodes(&args.out.join("episodes.jsonl"), &records)?;

    let gts: Vec<Vec<GroundTruth>> = scenes.iter().map(|s| s.ground_truth()).collect();
    let index_of = |id: u64| {
        scenes
            .iter()
            .position(|s| s.scene_id() == id)
            .expect("record scene is loaded")
    };
    let (ap, ar, coco, mean_final_miou) = match cfg.episode.task {
        TaskKind::Detection => {
            let images: Vec<ImageEval> = records
                .iter()
                .map(|r| ImageEval {
                    preds: &r.detections,
                    gts: &gts[index_of(r.scene_id)],
                })
                .collect();
            let at = ap_ar_images(&images, cfg.eval.iou_thr, AreaRange::ALL);
            (
                at.map(|x| x.0),
                at.map(|x| x.1),
                Some(coco_eval(&images, cfg.eval.size_buckets)),
                None,
            )
        }
        TaskKind::Segmentation => (
            None,
            None,
            None,
            Some(mean(records.iter().filter_map(|r| r.miou_trajectory.last().copied()))),
        ),
    };

    let curve = budget_curve(&scenes, &records, &cfg.episode, cfg.seed)?;
    dataio::write_csv(&args.out.join("budget_curve.csv"), &header("eval", cfg), &curve)?;
    if args.plot {
        let title = format!("{} / {}", policy.name(), cfg.episode.task.as_str());
        let y_label = match cfg.episode.task {
            TaskKind::Detection => "AP50 + AR50",
            TaskKind::Segmentation => "mIoU",
        };
        plot::budget_curve_svg(&args.out.join("budget_curve.svg"), &curve, &title, y_label)
            .map_err(CliError::Runtime)?;
    }

    let totals: Vec<f64> = records.iter().map(|r| r.reward.total).collect();
    let mean_total = mean(totals.iter().copied());
    let std_total = mean(totals.iter().map(|t| (t - mean_total).powi(2))).sqrt();
    let summary = EvalSummary {
        policy: policy.name(),
        task: cfg.episode.task,
        reward_mode: cfg.episode.reward_mode,
        seed: cfg.seed,
        scenes: scenes.len(),
        episodes: records.len(),
        format_ok_rate: mean(records.iter().map(|r| r.format_ok as u8 as f64)),
        mean_total,
        std_total,
        mean_heuristic: mean(records.iter().map(|r| r.reward.heuristic_total)),
        mean_task: mean(records.iter().map(|r| r.reward.r_task)),
        iou_thr: cfg.eval.iou_thr,
        ap,
        ar,
        coco,
        mean_final_miou,
        budget_curve: curve,
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(summary)
}

// --------------------------------------------------------------------- train

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub scenes: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub reward_mode: RewardMode,
    pub task: TaskKind,
    pub seed: u64,
    pub scenes: usize,
    pub iterations: u64,
    /// Mean sampled reward over the last 20 iterations, in the training mode.
    pub final_mean_reward: f64,
    /// Greedy decoding of the final policy, scored with the combined reward.
    pub greedy_mean_combined: f64,
    pub greedy_mean_task: f64,
    pub greedy_anchors: Vec<BBox>,
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let scenes = load_or_generate(cfg, args.scenes.as_deref())?;
    let frame = common_frame(&scenes)?;
    let k = cfg.episode.proposals_per_episode();
    let mut policy =
        AnchorGridPolicy::for_frame(frame, &cfg.episode.heuristic, k).map_err(|e| CliError::Usage(e.to_string()))?;
    let env = SceneEnv::new(&scenes, cfg.episode.clone(), cfg.seed).map_err(|e| match e {
        GrpoError::Env(m) => CliError::Data(m),
        other => CliError::Usage(other.to_string()),
    })?;
    let report = train(&mut policy, &env, &cfg.grpo, cfg.seed).map_err(|e| match e {
        GrpoError::Config(m) => CliError::Usage(m),
        other => CliError::Runtime(other.to_string()),
    })?;

    ensure_dir(&args.out)?;
    dataio::write_csv::<TrainRow>(&args.out.join("train_report.csv"), &header("train", cfg), &report.rows)?;
    write_json(&args.out.join("policy.json"), &report.final_policy)?;

    let greedy = policy.clone().with_greedy(true);
    let mut combined = cfg.episode.clone();
    combined.reward_mode = RewardMode::Combined;
    let records = run_episodes(&scenes, &greedy, &combined, cfg.seed, 1)?;
    let summary = TrainSummary {
        reward_mode: cfg.episode.reward_mode,
        task: cfg.episode.task,
        seed: cfg.seed,
        scenes: scenes.len(),
        iterations: cfg.grpo.iterations,
        final_mean_reward: report.final_mean_reward(20),
        greedy_mean_combined: mean(records.iter().map(|r| r.reward.total)),
        greedy_mean_task: mean(records.iter().map(|r| r.reward.r_task)),
        greedy_anchors: greedy.greedy_selection().iter().map(|&i| greedy.anchors()[i]).collect(),
    };
    write_json(&args.out.join("summary.json"), &summary)?;
    Ok(summary)
}

// --------------------------------------------------------------------- score

#[derive(Debug, Clone, Default)]
pub struct ScoreArgs {
    pub response: PathBuf,
    pub scenes: PathBuf,
    /// Defaults to the first scene in the file.
    pub scene_id: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Scores one raw response against a scene. Box coordinates are read in the
/// frame of the initial observation; responses that fail to parse or validate
/// score zero everywhere.
pub fn cmd_score(cfg: &RunConfig, args: &ScoreArgs) -> Result<RewardBreakdown, CliError> {
    let text =
        fs::read_to_string(&args.response).map_err(|e| CliError::Data(format!("{}: {e}", args.response.display())))?;
    let scenes = dataio::load_scenes(&args.scenes)?;
    let scene = match args.scene_id {
        Some(id) => scenes.iter().find(|s| s.scene_id() == id),
        None => scenes.first(),
    }
    .ok_or_else(|| CliError::Data(format!("scene not found in {}", args.scenes.display())))?;

    let task = cfg.episode.task;
    let obs0 = initial_observation(scene, &cfg.episode.sensing);
    let transform = obs0.transform;
    let breakdown = match parse_and_validate(&text, transform.target_frame(), task) {
        Err(e) => {
            log::info!("response scores zero: {e}");
            RewardBreakdown::default()
        }
        Ok(local) => {
            let out = PolicyOutput {
                proposals: local.iter().map(|b| transform.remap_to_full(b)).collect(),
                log_prob: 0.0,
                raw_text: Some(text),
            };
            let rec = match task {
                TaskKind::Detection => evaluate_detection(scene, &out, &cfg.episode, cfg.seed, 0, "score"),
                TaskKind::Segmentation => {
                    let start = initial_seg_state(scene, &cfg.episode, cfg.seed).map_err(env_err)?;
                    evaluate_segmentation(scene, &start, &out, &cfg.episode, cfg.seed, 0, "score")
                }
            }
            .map_err(env_err)?;
            rec.reward
        }
    };
    if let Some(path) = &args.out {
        write_json(path, &breakdown)?;
    }
    Ok(breakdown)
}
