//! Command-line drivers: gradient checks, training, ablation and robustness
//! sweeps, the toy segmentation run, and Grad-CAM dumps.

pub mod commands;
pub mod config;
pub mod error;

use std::io::Write;
use std::path::PathBuf;

use anatomy_attn::harness::AblationAxis;
use clap::{Parser, Subcommand};

pub use config::{parse_ini, IniEntry, Settings};
pub use error::{CliError, ConfigError};

#[derive(Debug, Parser)]
#[command(name = "anatomy-attn", version, about = "Anatomy-aware attention experiments on synthetic data")]
pub struct Cli {
    /// INI config with [model], [train], [data], [ablation], [robustness],
    /// [seg], [seg_data] and [gradcheck] sections.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,

    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Override one config value, e.g. `--set model.pooling=gem`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare analytic and finite-difference gradients for every target.
    Gradcheck {
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        /// Restrict to target groups: ops, attention, losses, model.
        #[arg(long, value_delimiter = ',', value_name = "GROUP")]
        only: Vec<String>,
        /// Sign-flip the backward rule of the named op.
        #[arg(long, hide = true, value_name = "OP")]
        inject_fault: Option<String>,
    },
    /// Train one classifier and save a checkpoint.
    Train,
    /// Median test AUC over seeds for every value on one axis.
    Ablate {
        /// attention, pooling, mask_size or image_size.
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Degradation of the anatomy-attention and hard-mask models under mask cutout.
    Robustness {
        #[arg(long, value_delimiter = ',')]
        windows: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Alternating training of the toy segmentation networks.
    SegToy {
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Heatmaps for test images of a trained checkpoint.
    Gradcam {
        /// Directory holding `model.config`; defaults to `--out`.
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        class: usize,
        /// `last` or a pooled-stage index.
        #[arg(long, default_value = "last")]
        stage: String,
        /// Test-split indices.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        images: Vec<usize>,
    },
}

/// Load settings and dispatch. Progress and tables go to `log`.
pub fn run<W: Write>(cli: Cli, log: &mut W) -> Result<(), CliError> {
    let settings = Settings::load(cli.config.as_deref(), &cli.overrides)?;
    let ctx = commands::RunContext {
        settings,
        out: cli.out,
        seed: cli.seed,
    };
    let seeds_or_default = |s: Vec<u64>| if s.is_empty() { vec![cli.seed] } else { s };
    match cli.command {
        Command::Gradcheck {
            tol,
            eps,
            only,
            inject_fault,
        } => {
            let groups = commands::parse_groups(&only)?;
            commands::gradcheck(&ctx, tol, eps, &groups, inject_fault, log)
        }
        Command::Train => commands::train(&ctx, log),
        Command::Ablate { axis, seeds } => commands::ablate(&ctx, axis, &seeds_or_default(seeds), log),
        Command::Robustness { windows, seeds, trials } => {
            commands::robustness(&ctx, &windows, &seeds_or_default(seeds), trials, log)
        }
        Command::SegToy { seeds } => commands::seg_toy(&ctx, &seeds_or_default(seeds), log),
        Command::Gradcam {
            checkpoint,
            class,
            stage,
            images,
        } => {
            let stage = commands::parse_stage(&stage)?;
            let dir = checkpoint.unwrap_or_else(|| ctx.out.clone());
            commands::gradcam(&ctx, &dir, class, stage, &images, log)
        }
    }
}
