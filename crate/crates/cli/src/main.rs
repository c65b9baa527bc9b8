use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pointground::commands::{
    eval, infer, preprocess, synth, train_cmd, EvalArgs, InferArgs, PreprocessArgs, SynthArgs,
    TrainArgs,
};
use pointground::config::{parse_extension_mode, ConfigError};
use pointground::report::MetricSelection;
use pointground_core::evaluation::MetricParams;

/// Weakly-supervised grounding of text queries to 3D point-cloud proposals.
#[derive(Parser)]
#[command(name = "pointground", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene bundles for desk-scale experiments.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory; one bundle subdirectory per scene.
        #[arg(long)]
        scenes_out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Proposals per scene.
        #[arg(long, default_value_t = 4)]
        proposals: usize,
        /// Category pool size.
        #[arg(long, default_value_t = 8)]
        categories: usize,
        /// Calibrated frames per scene.
        #[arg(long, default_value_t = 3)]
        frames: usize,
    },
    /// Project proposals offline and cache per-scene 2D regions (and
    /// optionally frozen embeddings).
    Preprocess {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the rect post-processing: none | boundary_extended.
        #[arg(long)]
        extension_mode: Option<String>,
        /// Enable depth-based occlusion testing.
        #[arg(long)]
        use_depth: bool,
        /// Also cache frozen 2D/category embeddings so training never
        /// touches pixels.
        #[arg(long)]
        embed_cache: bool,
    },
    /// Train on preprocessed bundles; writes per-epoch checkpoints and a
    /// CSV training log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Ground every query with a trained checkpoint (2D-free).
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// How many of the query's top predicted categories to keep.
        #[arg(long, default_value_t = 3)]
        topk: usize,
        #[arg(long, default_value = "predictions.json")]
        out: PathBuf,
    },
    /// Score predictions and emit a report (JSON plus a text table).
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Comma-separated: acc_iou,selection,recall.
        #[arg(long, default_value = "acc_iou,selection,recall")]
        metrics: String,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        /// Recall depth n for R@n,IoU@m.
        #[arg(long, default_value_t = 3)]
        recall_n: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { seed, scenes_out, count, proposals, categories, frames } => {
            synth(&SynthArgs { seed, scenes_out, count, proposals, categories, frames })
        }
        Command::Preprocess { scenes, config, extension_mode, use_depth, embed_cache } => {
            let extension_mode = extension_mode
                .map(|s| parse_extension_mode(&s))
                .transpose()?;
            preprocess(&PreprocessArgs {
                scenes,
                config,
                extension_mode,
                use_depth: use_depth.then_some(true),
                embed_cache,
            })
        }
        Command::Train { config, scenes, out, seed, max_epochs } => {
            train_cmd(&TrainArgs { config, scenes, out, seed, max_epochs })
        }
        Command::Infer { checkpoint, scenes, topk, out } => {
            infer(&InferArgs { checkpoint, scenes, topk, out })
        }
        Command::Eval { predictions, scenes, metrics, report, recall_n } => {
            let metrics = MetricSelection::parse(&metrics)
                .map_err(|m| ConfigError::Invalid { field: "metrics".into(), message: m })?;
            let metric_params = MetricParams { recall_n, ..Default::default() };
            eval(&EvalArgs { predictions, scenes, metrics, report, metric_params })?;
            Ok(())
        }
    }
}

/// Usage and configuration mistakes exit 2; runtime failures exit 1.
fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| cause.downcast_ref::<ConfigError>().is_some())
}
