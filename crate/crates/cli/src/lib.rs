//! The `activezoom` command line: scene generation, evaluation, training and
//! response scoring over a layered configuration.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 runtime abort.

pub mod commands;
pub mod plot;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use activezoom::dataio::SelectionRule;
use clap::{Parser, Subcommand};
use serde::Serialize;

pub use commands::{
    cmd_eval, cmd_gen_scenes, cmd_score, cmd_train, BudgetPoint, EpisodeRow, EvalArgs, EvalSummary, GenArgs,
    GenSummary, ScoreArgs, TrainArgs, TrainSummary,
};
pub use settings::{resolve, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "activezoom", version, about = "Zoom-in sensing environment and GRPO trainer")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes, or import and select COCO annotations.
    GenScenes {
        /// Scene file to write.
        #[arg(long)]
        out: PathBuf,
        /// COCO instances file to import instead of generating.
        #[arg(long, conflicts_with = "num_scenes")]
        coco: Option<PathBuf>,
        /// Selection rule for imported scenes: small, dense or all.
        #[arg(long, requires = "coco")]
        rule: Option<SelectionRule>,
        /// Maximum imported scenes per dominant category.
        #[arg(long, requires = "coco")]
        cap: Option<usize>,
    },
    /// Run episodes for one policy and write per-episode and aggregate reports.
    Eval {
        /// Scene file; scenes are generated from the configuration otherwise.
        #[arg(long, conflicts_with = "num_scenes")]
        scenes: Option<PathBuf>,
        /// Policy file written by `train`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Episodes per scene.
        #[arg(long, default_value_t = 1)]
        samples: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Skip the budget-curve SVG.
        #[arg(long)]
        no_plot: bool,
    },
    /// Train the anchor-grid policy with GRPO.
    Train {
        /// Scene file; scenes are generated from the configuration otherwise.
        #[arg(long, conflicts_with = "num_scenes")]
        scenes: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one raw response file against a scene.
    Score {
        /// Raw response text, coordinates in the initial observation frame.
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Defaults to the first scene in the file.
        #[arg(long)]
        scene_id: Option<u64>,
        /// Also write the breakdown to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

/// Parses and runs a command line, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.overrides)?;
    match &cli.command {
        Command::GenScenes { out, coco, rule, cap } => {
            let args = GenArgs {
                out: out.clone(),
                coco: coco.clone(),
                rule: *rule,
                cap: *cap,
            };
            print_json(&cmd_gen_scenes(&cfg, &args)?);
        }
        Command::Eval {
            scenes,
            snapshot,
            samples,
            out,
            no_plot,
        } => {
            let args = EvalArgs {
                scenes: scenes.clone(),
                snapshot: snapshot.clone(),
                samples: *samples,
                out: out.clone(),
                plot: !no_plot,
            };
            let s = cmd_eval(&cfg, &args)?;
            print_json(&serde_json::json!({
                "policy": s.policy,
                "episodes": s.episodes,
                "mean_total": s.mean_total,
                "mean_task": s.mean_task,
                "ap": s.ap,
                "ar": s.ar,
                "mean_final_miou": s.mean_final_miou,
            }));
        }
        Command::Train { scenes, out } => {
            let args = TrainArgs {
                scenes: scenes.clone(),
                out: out.clone(),
            };
            print_json(&cmd_train(&cfg, &args)?);
        }
        Command::Score {
            response,
            scenes,
            scene_id,
            out,
        } => {
            let args = ScoreArgs {
                response: response.clone(),
                scenes: scenes.clone(),
                scene_id: *scene_id,
                out: out.clone(),
            };
            print_json(&cmd_score(&cfg, &args)?);
        }
        Command::PrintConfig => print!("{}", settings::to_toml(&cfg)),
    }
    Ok(())
}
