//! `histn`: synthetic data, training, evaluation and self-checks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use histn::verify::VerifyOptions;
use histn::Variant;

use config::Overrides;
use error::CliError;

#[derive(Parser)]
#[command(name = "histn", version, about = "Hierarchical spatial-temporal graph network for ordinal EEG scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the built-in numerical checks; needs no data.
    Verify {
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        grad_seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic ordinal corpus.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model and save its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-epoch losses here.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on every non-overlapping window of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "valence")]
        dimension: String,
    },
    /// Run the configured protocol for several variants and compare them.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "A,D")]
        variants: Vec<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the pooled deep features of every window as CSV.
    ExportFeatures {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "valence")]
        dimension: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Verify {
            report,
            grad_seeds,
            seed,
        } => commands::verify(
            report.as_deref(),
            &VerifyOptions {
                grad_seeds,
                seed,
                ..VerifyOptions::default()
            },
        ),
        Command::Synth { spec, out, seed } => commands::synth(spec.as_deref(), &out, seed),
        Command::Train {
            config,
            data,
            out,
            history,
            overrides,
        } => commands::train_cmd(config.as_deref(), data, out, history.as_deref(), &overrides),
        Command::Eval {
            ckpt,
            data,
            report,
            dimension,
        } => commands::eval(&ckpt, &data, &report, &dimension),
        Command::Benchmark {
            config,
            data,
            variants,
            out,
            overrides,
        } => commands::benchmark(config.as_deref(), data, &variants, out, &overrides),
        Command::ExportFeatures {
            ckpt,
            data,
            out,
            dimension,
        } => commands::export_features(&ckpt, &data, &out, &dimension),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
