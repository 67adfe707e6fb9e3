use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmct::commands::{self, TrainArgs};
use mmct::CliError;
use mmct_core::gradcheck::GradcheckConfig;

/// Multimodal momentum-contrast training on synthetic image/caption/tag data.
#[derive(Debug, Parser)]
#[command(name = "mmct", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Run configuration (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train encoders; writes metrics.csv, checkpoint.json and config.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; falls back to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: retrieval, linear probe and tagging.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic loss gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: perturb the analytic gradient of one loss.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::GenData { config, out: dest } => commands::gen_data(config.as_deref(), &dest, &mut out),
        Command::Train { config, data, out: out_dir, resume } => {
            let args = TrainArgs { config: config.as_deref(), data: &data, out_dir: out_dir.as_deref(), resume: resume.as_deref() };
            commands::train(&args, &mut out).map(drop)
        }
        Command::Eval { checkpoint, data, out: dest } => commands::eval(&checkpoint, &data, &dest, &mut out).map(drop),
        Command::Gradcheck { trials, seed, corrupt } => {
            let corrupt = corrupt.as_deref().map(commands::parse_loss_kind).transpose()?;
            let cfg = GradcheckConfig { trials: trials as usize, seed, corrupt };
            commands::gradcheck(&cfg, &mut out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
