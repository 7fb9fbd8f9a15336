//! `har` — multi-modal IMU activity recognition pipeline.
//!
//! Stages run in order: synth (or ingest) -> sample -> [augment --mode ka]
//! -> transform -> [augment --mode ja] -> train -> predict -> fuse/eval ->
//! report. Each stage persists its artifacts under the output directory
//! and validates that its inputs came from a prior stage.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage-order or
//! provenance error, 4 numeric failure (non-finite loss).

mod artifacts;
mod config;
mod preview;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use har_core::fusion::FusionMethod;

use crate::artifacts::StageOrderError;
use crate::config::ConfigError;
use crate::stages::{Ctx, EvalArgs, FuseArgs, IngestArgs, TrainOverrides};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE_ORDER: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "har", about = "Multi-modal IMU activity recognition pipeline", version)]
struct Cli {
    /// Pipeline config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all stage artifacts.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    /// Config override, e.g. --set modality.freq.train.epochs=20
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset into the raw stage.
    Synth,
    /// Convert external recording files into the canonical raw layout.
    Ingest {
        /// Source recording files.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Annotation file (subject,label,start_ms,end_ms).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Column-map preset (available: pamap2-hand).
        #[arg(long)]
        preset: Option<String>,
        /// Subject id override (default: file stem).
        #[arg(long)]
        subject: Option<String>,
    },
    /// Segment recordings by annotations and cut sliding windows.
    Sample,
    /// Turn windows into feature images for one modality.
    Transform {
        #[arg(long)]
        modality: String,
    },
    /// Enlarge the dataset: ka acts on windows, ja on feature images.
    Augment {
        #[arg(long)]
        mode: String,
    },
    /// Train per-fold models for one modality under the configured protocol.
    Train {
        #[arg(long)]
        modality: String,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Emit per-fold probability files over each fold's test windows.
    Predict {
        #[arg(long)]
        modality: String,
    },
    /// Fuse modality predictions into per-fold decision files.
    Fuse(FuseCli),
    /// Compute metrics; --grid sweeps all modality subsets.
    Eval(EvalCli),
    /// Render the final report and feature-image previews.
    Report {
        /// Proceed even when artifacts carry mixed config hashes.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct FuseCli {
    /// Internal modalities to fuse (default: all enabled).
    #[arg(long, value_delimiter = ',')]
    modalities: Vec<String>,
    /// External probability file, NAME=PATH; repeatable.
    #[arg(long, value_name = "NAME=PATH")]
    external: Vec<String>,
    /// Fusion method: max|avg|wmax|wavg (default from config).
    #[arg(long)]
    method: Option<String>,
    /// Top-K for informativity weighting.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EvalCli {
    /// Evaluate every modality subset (Table-style grid).
    #[arg(long)]
    grid: bool,
    /// External probability file, NAME=PATH; repeatable.
    #[arg(long, value_name = "NAME=PATH")]
    external: Vec<String>,
    /// Fusion method: max|avg|wmax|wavg (default from config).
    #[arg(long)]
    method: Option<String>,
    /// Top-K for informativity weighting.
    #[arg(long)]
    k: Option<usize>,
    /// Protocol override: hh|loo.
    #[arg(long)]
    protocol: Option<String>,
}

fn parse_external(specs: &[String]) -> Result<Vec<(String, PathBuf)>> {
    specs
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
                .ok_or_else(|| {
                    anyhow::anyhow!(ConfigError(format!("--external '{s}' must look like NAME=PATH")))
                })
        })
        .collect()
}

fn parse_method(s: Option<&str>) -> Result<Option<FusionMethod>> {
    match s {
        None => Ok(None),
        Some(v) => FusionMethod::parse(v)
            .map(Some)
            .map_err(|e| anyhow::anyhow!(ConfigError(format!("{e}")))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut sets = cli.sets.clone();
    if let Command::Eval(EvalCli {
        protocol: Some(p), ..
    }) = &cli.command
    {
        sets.push(format!("protocol.kind=\"{p}\""));
    }
    let cfg = config::load_config(cli.config.as_deref(), &sets, cli.seed)?;
    let hash = cfg.hash();
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        hash,
    };

    match &cli.command {
        Command::Synth => stages::cmd_synth(&ctx),
        Command::Ingest {
            input,
            annotations,
            preset,
            subject,
        } => stages::cmd_ingest(
            &ctx,
            &IngestArgs {
                inputs: input.clone(),
                annotations: annotations.clone(),
                preset: preset.clone(),
                subject: subject.clone(),
            },
        ),
        Command::Sample => stages::cmd_sample(&ctx),
        Command::Transform { modality } => stages::cmd_transform(&ctx, modality),
        Command::Augment { mode } => stages::cmd_augment(&ctx, mode),
        Command::Train {
            modality,
            lr,
            momentum,
            l2,
            batch,
            epochs,
        } => stages::cmd_train(
            &ctx,
            modality,
            &TrainOverrides {
                lr: *lr,
                momentum: *momentum,
                l2: *l2,
                batch: *batch,
                epochs: *epochs,
            },
        ),
        Command::Predict { modality } => stages::cmd_predict(&ctx, modality),
        Command::Fuse(args) => stages::cmd_fuse(
            &ctx,
            &FuseArgs {
                modalities: args.modalities.clone(),
                external: parse_external(&args.external)?,
                method: parse_method(args.method.as_deref())?,
                k: args.k,
            },
        ),
        Command::Eval(args) => stages::cmd_eval(
            &ctx,
            &EvalArgs {
                grid: args.grid,
                external: parse_external(&args.external)?,
                method: parse_method(args.method.as_deref())?,
                k: args.k,
            },
        ),
        Command::Report { force } => stages::cmd_report(&ctx, *force),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if err.downcast_ref::<StageOrderError>().is_some() {
        return EXIT_STAGE_ORDER;
    }
    match err.downcast_ref::<har_core::Error>() {
        Some(har_core::Error::NonFiniteLoss { .. }) => EXIT_NUMERIC,
        Some(har_core::Error::InvalidParameter(_)) => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
