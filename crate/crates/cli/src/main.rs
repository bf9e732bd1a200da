//! `regflow`: generate datasets, train and evaluate conditional density
//! models, and render density heatmaps.

mod commands;
mod manifest;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regflow::Error;

#[derive(Parser, Debug)]
#[command(name = "regflow", version, about = "Hypernetwork-conditioned continuous normalizing flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/test datasets from a generator config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a generated dataset directory.
    Train {
        #[arg(long, default_value = "regflow")]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the test split and write a CSV report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "nll")]
        metrics: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inputs at which sample-based metrics are computed.
        #[arg(long, default_value_t = 20)]
        probes: usize,
        /// Samples per probe for EMD and DEMD.
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
    /// Render the model density on a grid as a PGM heatmap plus raw CSV.
    DensityGrid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conditioning vector; omit for scalar models to map p(y | x) over
        /// the (x, y) box.
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples from the model at one conditioning vector.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// 2 for anything the caller can fix by changing inputs, 1 otherwise.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NumericalBlowUp { .. } | Error::NonFiniteLoss { .. } => 1,
        Error::Io(e) if e.kind() != std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("REGFLOW_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Invalid(format!("REGFLOW_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().map_err(commands::Failure::from).and_then(|_| match cli.command {
        Command::Gen { config, out, seed } => commands::gen(&config, &out, seed),
        Command::Train { model, data, config, out, seed } => commands::train(&model, &data, config.as_deref(), &out, seed),
        Command::Eval { checkpoint, data, metrics, out, seed, probes, samples } => {
            commands::eval(&checkpoint, &data, &metrics, &out, seed, probes, samples)
        }
        Command::DensityGrid { checkpoint, x, grid, out } => commands::density_grid(&checkpoint, x.as_deref(), &grid, &out),
        Command::Sample { checkpoint, x, n, seed, out } => commands::sample(&checkpoint, &x, n, seed, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure { error, code }) => {
            eprintln!("error: {error}");
            ExitCode::from(code.unwrap_or_else(|| exit_code(&error)))
        }
    }
}
