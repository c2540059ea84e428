mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sshd_core::threads::{configure_threads, threads_from_env};
use sshd_core::CoreError;

/// Point-supervised infrared small-target detection.
#[derive(Parser)]
#[command(name = "sshd-net", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory and write checkpoints to --out.
    Train {
        /// JSON object holding any model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the 6:2:2 split when the dataset has no split.json.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Detect targets in every PGM image of a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Detections as JSON lines.
        #[arg(long)]
        out: PathBuf,
        /// Model settings; defaults to config.json beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dump_heatmaps: Option<PathBuf>,
        /// pgm (8-bit, for viewing) or raw (f32).
        #[arg(long, default_value = "pgm")]
        heatmap_format: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Score a detections file against a dataset directory's labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        rule: RuleArgs,
        /// Restrict ground truth to one split of the manifest.
        #[arg(long)]
        split: Option<String>,
    },
    /// Turn segmentation masks into single-point label files.
    Annotate {
        #[arg(long)]
        masks: PathBuf,
        /// Images used to weight centroids; unweighted when absent.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
    },
    /// Run an ablation suite: lambda, width or topology.
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        data: PathBuf,
        /// Trained checkpoint whose test-split heatmaps the lambda sweep decodes.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16])]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every op and block.
    Gradcheck {
        /// A case name, or all.
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long, default_value_t = 5.0)]
    radius: f64,
    /// Count a distance of exactly --radius as a match (the default).
    #[arg(long, conflicts_with = "exclusive")]
    inclusive: bool,
    #[arg(long)]
    exclusive: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = configure_threads(threads_from_env()?);
    log::debug!("{threads} worker threads");
    match cli.command {
        Command::Train { config, data, out, split_seed } => commands::train(config.as_deref(), &data, &out, split_seed),
        Command::Infer { ckpt, images, out, config, dump_heatmaps, heatmap_format, lambda, tau } => {
            commands::infer(&ckpt, &images, &out, config.as_deref(), dump_heatmaps.as_deref(), &heatmap_format, lambda, tau)
        }
        Command::Eval { pred, gt, rule, split } => {
            commands::eval(&pred, &gt, sshd_core::MatchRule { radius: rule.radius, inclusive: rule.inclusive || !rule.exclusive }, split.as_deref())
        }
        Command::Annotate { masks, images, out } => commands::annotate(&masks, images.as_deref(), &out),
        Command::Synth { config, out, count } => commands::synth(config.as_deref(), &out, count),
        Command::Ablate { suite, data, ckpt, config, widths, split_seed, out } => {
            commands::ablate(&suite, &data, ckpt.as_deref(), config.as_deref(), &widths, split_seed, out.as_deref())
        }
        Command::Gradcheck { ops, seeds, tol } => commands::gradcheck(&ops, seeds, tol),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CoreError>() {
                Some(CoreError::Usage(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
