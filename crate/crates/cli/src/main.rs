//! `armsight`: synthetic data generation, staged training, evaluation and
//! benchmarking of the multi-objective robot network.

mod commands;
mod config;
mod error;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, EXIT_CODES};

#[derive(Parser)]
#[command(name = "armsight", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output run directory (must be empty or absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset: images, masks and dataset.json.
    #[command(after_help = EXIT_CODES)]
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_per_type: Option<usize>,
        /// Comma-separated robot names from the catalog.
        #[arg(long, value_delimiter = ',')]
        types: Option<Vec<String>>,
    },
    /// Train every layer on a single-family dataset.
    #[command(after_help = EXIT_CODES)]
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Training iterations.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Two-stage transfer of a pretrained checkpoint to a mixed dataset that
    /// still contains the base family.
    #[command(after_help = EXIT_CODES)]
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Length of the learning-rate schedule.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split of a dataset.
    #[command(after_help = EXIT_CODES)]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Answer with the ground truth instead of a network (harness check).
        #[arg(long, conflicts_with = "checkpoint")]
        oracle_stub: bool,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Time single-frame forward passes.
    #[command(after_help = EXIT_CODES)]
    Bench {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to time; an untrained network otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset whose first test image is used as input.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Write plot-ready CSVs for a finished eval or reference run.
    #[command(after_help = EXIT_CODES)]
    ExportCurves {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: Option<PathBuf>,
        /// Pretrained checkpoint for the loss-versus-size study.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mixed dataset for the loss-versus-size study.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated training-set sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Generate, pretrain, transfer, evaluate and run the size study in one go.
    #[command(after_help = EXIT_CODES)]
    Reference {
        #[command(flatten)]
        common: Common,
    },
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ARMSIGHT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("ARMSIGHT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

fn base_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) {
    if v.is_some() {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_threads()?;
    match cli.command {
        Command::GenData { common, n_per_type, types } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.generator.n_per_type, n_per_type);
            set(&mut cfg.generator.types, types);
            cfg.validate()?;
            commands::gen_data(&cfg, &common.out)
        }
        Command::Pretrain { common, data, iters } => {
            let mut cfg = base_config(&common)?;
            set_path(&mut cfg.paths.data, data);
            set(&mut cfg.pretrain.total_iters, iters);
            cfg.validate()?;
            commands::pretrain_cmd(&cfg, &common.out)
        }
        Command::Transfer {
            common,
            data,
            checkpoint,
            iters,
        } => {
            let mut cfg = base_config(&common)?;
            set_path(&mut cfg.paths.data, data);
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set(&mut cfg.transfer.total_iters, iters);
            cfg.validate()?;
            commands::transfer_cmd(&cfg, &common.out)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            oracle_stub,
            threshold,
        } => {
            let mut cfg = base_config(&common)?;
            set_path(&mut cfg.paths.data, data);
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set(&mut cfg.eval.mask_threshold, threshold);
            cfg.validate()?;
            commands::eval_cmd(&cfg, &common.out, oracle_stub)
        }
        Command::Bench {
            common,
            checkpoint,
            data,
            frames,
        } => {
            let mut cfg = base_config(&common)?;
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set_path(&mut cfg.paths.data, data);
            set(&mut cfg.eval.bench_frames, frames);
            cfg.validate()?;
            commands::bench_cmd(&cfg, &common.out)
        }
        Command::ExportCurves {
            common,
            run,
            checkpoint,
            data,
            sizes,
        } => {
            let mut cfg = base_config(&common)?;
            set_path(&mut cfg.paths.run, run);
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set_path(&mut cfg.paths.data, data);
            set(&mut cfg.sizes.sizes, sizes);
            cfg.validate()?;
            commands::export_curves(&cfg, &common.out)
        }
        Command::Reference { common } => {
            let cfg = base_config(&common)?;
            cfg.validate()?;
            commands::reference_cmd(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
