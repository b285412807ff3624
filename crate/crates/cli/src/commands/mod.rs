//! Command-line surface and dispatch.

mod eval_ap;
mod fixture;
mod gradcheck_cmd;
mod losses;
mod show;
mod synth;
mod train;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

/// Training-objective toolkit for small-object detection: synthetic
/// fixtures, losses, gradient verification, a toy trainer, and COCO-style
/// AP evaluation.
#[derive(Debug, Parser)]
#[command(name = "sodet", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Configuration file (TOML); flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed for every deterministic generator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for reports (falls back to $SODET_OUT, then ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Size-bucket scheme: visdrone or soda-d.
    #[arg(long, global = true, default_value = "visdrone")]
    pub scheme: String,

    /// Scale-target beta override.
    #[arg(long, global = true)]
    pub beta: Option<f64>,

    /// Scale-target theta override.
    #[arg(long, global = true)]
    pub theta: Option<f64>,

    /// Varifocal alpha override.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Varifocal gamma override.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,

    /// Expansion-rate schedule override, six comma-separated values.
    #[arg(long, global = true, value_delimiter = ',', value_name = "V1,..,V6")]
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate all losses on a synthetic fixture and report every
    /// per-query intermediate.
    Losses,
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        /// Comma-separated name filter; an empty match set succeeds with
        /// zero checks.
        #[arg(long, value_name = "NAMES")]
        only: Option<String>,
        /// Scale one analytic gradient by 1.01 to demonstrate failure
        /// reporting (exits non-zero).
        #[arg(long)]
        plant_fault: bool,
    },
    /// Gradient-descent demo minimizing the total loss on fixed
    /// synthetic fixtures.
    TrainDemo {
        /// Number of descent steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate COCO-format detections against ground truth.
    EvalAp {
        /// Ground-truth annotations (COCO JSON).
        gt: PathBuf,
        /// Detections (COCO result JSON).
        det: PathBuf,
    },
    /// Emit COCO-format synthetic fixtures.
    Synth {
        /// Number of images (defaults to the configured scene count).
        #[arg(long)]
        images: Option<usize>,
        /// Copy ground truth as score-1 detections instead of perturbing.
        #[arg(long)]
        identity_detections: bool,
    },
    /// Pretty-print a previously written report JSON.
    Report {
        /// Path to a `<command>-<runid>.json` report.
        path: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        beta: cli.beta,
        theta: cli.theta,
        alpha: cli.alpha,
        gamma: cli.gamma,
        eta: cli.eta.clone(),
    };
    match cli.command {
        Command::Report { ref path } => show::run(path),
        ref command => {
            let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
            match command {
                Command::Losses => losses::run(&config),
                Command::Gradcheck { only, plant_fault } => {
                    gradcheck_cmd::run(&config, only.as_deref(), *plant_fault)
                }
                Command::TrainDemo { steps, lr } => train::run(&config, *steps, *lr),
                Command::EvalAp { gt, det } => eval_ap::run(&config, gt, det, &cli.scheme),
                Command::Synth {
                    images,
                    identity_detections,
                } => synth::run(&config, *images, *identity_detections),
                Command::Report { .. } => unreachable!("handled above"),
            }
        }
    }
}
