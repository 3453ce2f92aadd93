//! `stitchwork`: split, style, train, translate, gradcheck, synth, serve.
//!
//! Exit codes: 0 success, 2 IO, 3 usage, 4 numerical failure. Machine-readable
//! results go to stdout; diagnostics, including the echoed effective
//! configuration, go to stderr.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::CliConfig;
use crate::exit::CliError;

#[derive(Debug, Parser)]
#[command(name = "stitchwork", version, about = "Embroidery previews by split style transfer and EmbGAN")]
struct Cli {
    /// TOML file overriding the built-in defaults; flags override the file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Do not echo the effective configuration.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Quantize an image and write one sub-image and mask per color region.
    Split(SplitArgs),
    /// Style an image with one swatch, or one swatch per color region.
    Style(StyleArgs),
    /// Train EmbGAN on a dataset manifest.
    Train(TrainArgs),
    /// Run a trained generator on one image.
    Translate(TranslateArgs),
    /// Check every analytic gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic unpaired corpus and its manifest.
    Synth(SynthArgs),
    /// Build a dataset manifest from two image directories.
    Manifest(ManifestArgs),
    /// Write the built-in procedural stitch swatches.
    Swatches(SwatchesArgs),
    /// Run the HTTP preview service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub max_colors: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f32>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StyleMode {
    Neural,
    Split,
}

#[derive(Debug, Args)]
pub struct StyleArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// One swatch, or one per palette region in region order.
    #[arg(long, num_args = 1.., required = true)]
    pub style: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "neural")]
    pub mode: StyleMode,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Longer side of the working copy (0 = full resolution).
    #[arg(long)]
    pub working_size: Option<usize>,
    #[arg(long)]
    pub max_colors: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines loss log; defaults to the output path with `.losses.jsonl`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Square training image size.
    #[arg(long)]
    pub size: Option<usize>,
    /// Embedding channels.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda_cyc: Option<f64>,
    #[arg(long)]
    pub lambda_idt: Option<f64>,
    #[arg(long)]
    pub lambda_emb: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub base_filters: Option<usize>,
    #[arg(long)]
    pub checkpoint_dir: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// x2y (flat → stitched) or y2x.
    #[arg(long, default_value = "x2y")]
    pub direction: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = stitchwork_core::gradsuite::DEFAULT_SEEDS)]
    pub seeds: usize,
    #[arg(long, default_value_t = stitchwork_core::gradsuite::DEFAULT_STEP)]
    pub step: f64,
    /// Only cases whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images per domain.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub eval_pairs: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub train_fraction: f64,
    #[arg(long)]
    pub allow_empty_test: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SwatchesArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub stitch_dir: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Directory served at `/` (e.g. the browser demo).
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cfg = commands::apply_flags(cfg, &cli.command).finish();
    if !cli.quiet {
        eprintln!("# effective configuration\n{}", cfg.to_toml());
    }
    match &cli.command {
        Command::Split(a) => commands::split(&cfg, a),
        Command::Style(a) => commands::style(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Translate(a) => commands::translate(a),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, a),
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Manifest(a) => commands::manifest(&cfg, a),
        Command::Swatches(a) => commands::swatches(a),
        Command::Serve(_) => commands::serve(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::OK as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
