//! `prunekit` command-line front end.

mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Method;
use crate::failure::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "prunekit", version, about = "FLOPs-budgeted magnitude pruning toolkit")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Emit reports as CSV instead of JSON.
    #[arg(long, global = true)]
    pub csv: bool,
    /// Ignore unknown fields in model manifests.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Write the report to this file instead of stdout.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Raw little-endian f32 weight blob.
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count per-layer and total MACs, optionally under a mask.
    Flops {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Prune a model to a sparsity or a FLOPs target.
    Prune {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        target_mflops: Option<f64>,
        /// Directory for the mask, pruned model and report.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sparsity needed for a FLOPs target.
    Solve {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        target_mflops: f64,
        /// Total MFLOPs of the unpruned model (closed form, no model).
        #[arg(long)]
        seed_mflops: Option<f64>,
        /// MFLOPs in prunable layers (closed form, no model).
        #[arg(long)]
        prunable_mflops: Option<f64>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Fine-tune with a fixed mask.
    Finetune {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// TOML dataset description.
        #[arg(long)]
        data: PathBuf,
        /// TOML training settings.
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time the block-sparse kernel against the dense one.
    Bench {
        #[arg(long, default_value_t = 256)]
        rows: usize,
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Block sparsities to measure; defaults to 0.4, 0.5 and 0.6.
        #[arg(long, value_delimiter = ',')]
        sparsity: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        /// Take the weights of this pointwise layer instead of random ones.
        #[arg(long, requires_all = ["model", "weights"])]
        layer: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Accuracy with each prunable layer pruned in isolation.
    Sensitivity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = prunekit::analysis::DEFAULT_PROBE_SPARSITY)]
        sparsity: f64,
        /// Emit `x,y` pairs for plotting.
        #[arg(long)]
        plot_data: bool,
    },
    /// Run a prune, fine-tune, evaluate and report experiment from a TOML file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Training cost in GPU-hours.
    GpuHours {
        #[arg(long)]
        nodes: u32,
        #[arg(long)]
        gpus_per_node: u32,
        #[arg(long)]
        hours: f64,
        /// GPU-hours of a reference run; adds the speedup over it.
        #[arg(long)]
        reference: Option<f64>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("PRUNEKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::usage(format!("PRUNEKIT_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
