//! Batch command-line front end: dataset generation, training, inference,
//! evaluation, robustness benchmarking, and configuration inspection.
//!
//! Exit codes: 0 success, 1 generic failure, 2 unreadable input file,
//! 3 non-finite values during optimization, 4 dimension mismatch,
//! 5 prediction/ground-truth id mismatch.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pairvote::config::RunConfig;

use commands::CmdError;

#[derive(Parser)]
#[command(
    name = "pairvote",
    version,
    about = "Point-pair voting for 9D object pose from depth point clouds"
)]
struct Cli {
    /// Configuration file ([section] key = value); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads, 0 = all cores. Overrides PAIRVOTE_WORKERS and the
    /// config file.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic depth views of meshes into a dataset directory.
    Gen {
        /// Mesh files (.ply or .obj); repeat per mesh. Overrides the
        /// config file's mesh list.
        #[arg(long = "mesh", value_name = "FILE")]
        meshes: Vec<PathBuf>,
        /// Views rendered per mesh.
        #[arg(long)]
        views: Option<usize>,
        /// Master seed for poses and corruption.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory to create.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the network predictor on a generated dataset.
    Train {
        /// Dataset directory produced by `gen`.
        dataset: PathBuf,
        /// Checkpoint to continue from (exact optimizer resume).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Epochs to run (defaults to the config value).
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory for checkpoint.bin and loss.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a pose for every scene in a dataset directory.
    Infer {
        /// Dataset directory containing scene PLYs and pose sidecars.
        dataset: PathBuf,
        /// "oracle" or a checkpoint path.
        #[arg(long, default_value = "oracle")]
        predictor: String,
        /// Two checkpoints scored per scene; the lower final alignment
        /// residual wins and fills the model column.
        #[arg(long, num_args = 2, value_name = "CKPT")]
        ensemble: Vec<PathBuf>,
        /// Predictions CSV path (default <dataset>/predictions.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions CSV against dataset ground truth.
    Eval {
        /// Predictions CSV from `infer`.
        predictions: PathBuf,
        /// Dataset directory with ground-truth sidecars.
        dataset: PathBuf,
        /// Extra categories treated as symmetric about their up axis.
        #[arg(long = "symmetric", value_name = "CATEGORY")]
        symmetric: Vec<String>,
        /// Report directory (default <dataset>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oracle robustness sweep over coordinate noise x clutter.
    Bench {
        /// Comma-separated coordinate-noise sigmas.
        #[arg(long, default_value = "0,0.02")]
        sigmas: String,
        /// Comma-separated clutter fractions.
        #[arg(long, default_value = "0,0.3")]
        clutters: String,
        /// Estimation runs per grid cell.
        #[arg(long, default_value_t = 15)]
        runs: usize,
        /// Output CSV (default bench.csv in the working directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config {
        /// Emit the full key = value dump (also the default behavior).
        #[arg(long)]
        dump: bool,
    },
}

fn effective_workers(cli_workers: Option<usize>, cfg: &RunConfig) -> usize {
    if let Some(n) = cli_workers {
        return n;
    }
    if let Ok(text) = std::env::var("PAIRVOTE_WORKERS") {
        if let Ok(n) = text.trim().parse() {
            return n;
        }
    }
    cfg.workers
}

fn run() -> Result<(), CmdError> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| CmdError::new(2, e.to_string()))?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(CmdError::from)?;

    let workers = effective_workers(cli.workers, &cfg);
    if workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| CmdError::new(1, format!("cannot size worker pool: {e}")))?;
    }

    match cli.command {
        Command::Gen {
            meshes,
            views,
            seed,
            out,
        } => commands::cmd_gen(cfg, meshes, views, seed, out),
        Command::Train {
            dataset,
            resume,
            epochs,
            out,
        } => commands::cmd_train(cfg, &dataset, resume, epochs, out),
        Command::Infer {
            dataset,
            predictor,
            ensemble,
            out,
        } => commands::cmd_infer(cfg, &dataset, &predictor, &ensemble, out),
        Command::Eval {
            predictions,
            dataset,
            symmetric,
            out,
        } => commands::cmd_eval(cfg, &predictions, &dataset, &symmetric, out),
        Command::Bench {
            sigmas,
            clutters,
            runs,
            out,
        } => commands::cmd_bench(cfg, &sigmas, &clutters, runs, out),
        Command::Config { dump: _ } => {
            print!("{}", cfg.dump());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
