use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

/// Run and check network flow control scenarios.
#[derive(Debug, Parser)]
#[command(name = "imflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every section of a scenario and print a pass/fail table.
    Validate { file: PathBuf },
    /// Integrate a scenario (or every scenario in a directory with --batch).
    Run {
        path: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Output directory; overrides the scenario's outputs section.
        #[arg(long, env = "IMFLOW_OUT_DIR")]
        out: Option<PathBuf>,
        /// Treat PATH as a directory and run each *.json inside it concurrently.
        #[arg(long)]
        batch: bool,
    },
    /// Compare the static optimizer with the projected-gradient oracle.
    Oracle { file: PathBuf },
    /// Print the regulator solution and the rank-feasibility verdict.
    Regulator { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Validate { file } => commands::validate(&file),
        Command::Run {
            path,
            dt,
            horizon,
            out,
            batch,
        } => {
            let overrides = commands::Overrides { dt, horizon, out };
            if batch {
                commands::run_batch(&path, &overrides)
            } else {
                commands::run(&path, &overrides)
            }
        }
        Command::Oracle { file } => commands::oracle(&file),
        Command::Regulator { file } => commands::regulator(&file),
    };
    ExitCode::from(status as u8)
}
