//! Layered run configuration: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use activezoom::config::{PolicyKind, RunConfig};
use activezoom::metrics::RewardMode;
use activezoom::TaskKind;
use clap::Args;
use toml::{Table, Value};

use crate::CliError;

/// Flags that override single configuration keys.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// Base seed for scene generation, sampling and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with sections named after the configuration structs.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<std::path::PathBuf>,
    /// detection or segmentation.
    #[arg(long, global = true)]
    pub task: Option<TaskKind>,
    /// Sensing budget K.
    #[arg(long, global = true)]
    pub budget: Option<u32>,
    /// IoU threshold for the reported AP/AR.
    #[arg(long = "iou-thr", global = true)]
    pub iou_thr: Option<f64>,
    /// task, heuristic or combined.
    #[arg(long = "reward-mode", global = true)]
    pub reward_mode: Option<RewardMode>,
    /// Number of generated scenes.
    #[arg(long = "num-scenes", global = true)]
    pub num_scenes: Option<usize>,
    /// GRPO iterations.
    #[arg(long, global = true)]
    pub iterations: Option<u64>,
    /// GRPO step size.
    #[arg(long = "learning-rate", global = true)]
    pub learning_rate: Option<f64>,
    /// random, grid, oracle, trained or external.
    #[arg(long, global = true)]
    pub policy: Option<PolicyKind>,
    /// Base URL of an OpenAI-compatible chat endpoint.
    #[arg(long = "endpoint-url", global = true)]
    pub endpoint_url: Option<String>,
}

fn merge(base: &mut Table, layer: Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn task_in(file: &Table) -> Option<TaskKind> {
    let lookup = |section: &str, key: &str| {
        file.get(section)
            .and_then(|s| s.get(key))
            .and_then(Value::as_str)
            .and_then(|s| s.parse().ok())
    };
    lookup("episode", "task").or_else(|| lookup("scenes", "kind"))
}

pub fn read_config_file(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Resolves the effective configuration. The task picks the built-in
/// benchmark the other layers apply to.
pub fn resolve(ov: &Overrides) -> Result<RunConfig, CliError> {
    let file = match &ov.config {
        Some(p) => read_config_file(p)?,
        None => Table::new(),
    };
    let task = ov.task.or_else(|| task_in(&file)).unwrap_or_default();
    let mut table = Table::try_from(RunConfig::for_task(task)).map_err(|e| CliError::Runtime(e.to_string()))?;
    merge(&mut table, file);
    let mut cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {e}")))?;
    cfg.episode.task = task;
    cfg.scenes.kind = task;

    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = ov.budget {
        cfg.episode.sensing.budget_k = v;
    }
    if let Some(v) = ov.iou_thr {
        cfg.eval.iou_thr = v;
    }
    if let Some(v) = ov.reward_mode {
        cfg.episode.reward_mode = v;
    }
    if let Some(v) = ov.num_scenes {
        cfg.num_scenes = v;
    }
    if let Some(v) = ov.iterations {
        cfg.grpo.iterations = v;
    }
    if let Some(v) = ov.learning_rate {
        cfg.grpo.learning_rate = v;
    }
    if let Some(v) = ov.policy {
        cfg.eval.policy = v;
    }
    if let Some(v) = &ov.endpoint_url {
        cfg.endpoint.base_url = v.clone();
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let usage = |e: String| CliError::Usage(format!("invalid configuration: {e}"));
    cfg.episode.validate().map_err(|e| usage(e.to_string()))?;
    cfg.grpo.validate().map_err(|e| usage(e.to_string()))?;
    cfg.scenes.frame().map_err(|e| usage(e.to_string()))?;
    if !(cfg.eval.iou_thr > 0.0 && cfg.eval.iou_thr <= 1.0) {
        return Err(usage(format!("iou_thr {} outside (0, 1]", cfg.eval.iou_thr)));
    }
    if cfg.eval.grid_side == 0 {
        return Err(usage("grid_side must be positive".into()));
    }
    Ok(())
}

/// The configuration as TOML, as written by `print-config` and into report
/// headers.
pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes")
}
