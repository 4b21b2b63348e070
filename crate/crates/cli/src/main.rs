//! `vidpose`: synthesize data, train, evaluate, check gradients and
//! inspect artifacts.
//!
//! Exit status: 0 on success, 1 when a verification fails (or a run aborts
//! at runtime), 2 on usage and configuration errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidpose_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "vidpose", version, about = "Multi-frame pose estimation on synthetic video")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set train.epochs=3`. Repeatable;
    /// later values win.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,

    /// Output root. Defaults to `out_dir` from the configuration, then
    /// `$VIDPOSE_OUT`, then `./vidpose-out`.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic dataset to PNG frames and JSON sidecars.
    Synth(SynthArgs),
    /// Train a model, writing per-epoch checkpoints and the loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences per module.
    Gradcheck(GradcheckArgs),
    /// Summarize a checkpoint, sidecar or report file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Components to disable: any of `afw`, `msff`, `crossattn`.
    #[arg(long, value_name = "LIST")]
    pub ablate: Option<String>,
    /// Number of epochs (0 writes the initial checkpoint only).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    /// Use the published optimizer constants (lr 5e-6, weight decay 0.1,
    /// batch 16) instead of the from-scratch defaults.
    #[arg(long)]
    pub finetune_schedule: bool,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate. Its stored configuration is used unless
    /// `--config` is given; `--set` applies on top either way.
    #[arg(long, value_name = "CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Which windows to score.
    #[arg(long, value_enum, default_value = "heldout")]
    pub split: commands::Split,
    /// Write per-window frame weights.
    #[arg(long)]
    pub dump_weights: bool,
    /// Write per-window cross-attention maps.
    #[arg(long)]
    pub dump_attn: bool,
    /// Write precision–recall and PCK-threshold plots.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to one group; repeatable.
    #[arg(long = "group")]
    pub groups: Vec<String>,
    /// Print every tensor, not just the group maxima.
    #[arg(long)]
    pub verbose: bool,
    /// Harness self-test: perturb the analytic gradients of this group.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Verification outcome distinct from an error.
pub enum Outcome {
    Ok,
    Failed,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Config(_) | CoreError::Usage(_) | CoreError::Mismatch(_) => 2,
                CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match commands::run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
