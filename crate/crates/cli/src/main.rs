use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spotkal_cli::{cmd_bench, cmd_identify, cmd_synthesize, cmd_tune, cmd_validate, CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "spotkal", version, about = "Spot jitter synthesis, tracking and identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral factor, disturbance record and its PSD.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Camera frames and centroid track from a disturbance record.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        disturbance: PathBuf,
    },
    /// Noise covariance tuning of the tracking filter.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        track: PathBuf,
    },
    /// Subspace identification of an innovation-form model.
    Identify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        track: PathBuf,
    },
    /// Scores a stored model against a track.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        track: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let load = |c: &Common| PipelineConfig::load(c.config.as_deref(), c.seed);
    let outcome = match &cli.command {
        Command::Synthesize { common } => cmd_synthesize(&load(common)?, &common.out)?,
        Command::Bench { common, disturbance } => cmd_bench(&load(common)?, &common.out, disturbance)?,
        Command::Tune { common, track } => cmd_tune(&load(common)?, &common.out, track)?,
        Command::Identify { common, track } => cmd_identify(&load(common)?, &common.out, track)?,
        Command::Validate { common, model, track } => cmd_validate(&load(common)?, &common.out, model, track)?,
    };
    for (name, digest) in &outcome.outputs {
        println!("{digest}  {name}");
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
