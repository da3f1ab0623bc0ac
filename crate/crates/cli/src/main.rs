use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use falsify_iv::config::load_config;
use falsify_iv::{init_threads_from_env, run_analysis, run_frontier};

/// Identified sets, falsification frontiers, and falsification adaptive sets
/// for instrumental-variable models.
#[derive(Parser)]
#[command(name = "falsify-iv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured analysis and write the JSON report (plus any
    /// requested CSVs).
    Run {
        /// Path to the JSON analysis config.
        #[arg(long)]
        config: PathBuf,
        /// Directory for output files (relative output paths resolve here).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Compute only the falsification frontier and write it as CSV.
    Frontier {
        /// Path to the JSON analysis config.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    init_threads_from_env();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out_dir } => load_config(config)
            .and_then(|cfg| run_analysis(&cfg, out_dir.as_deref()))
            .map(|report| {
                if let Some(l) = &report.linear {
                    eprintln!(
                        "linear model: baseline {}falsified",
                        if l.baseline_falsified { "" } else { "not " }
                    );
                }
            }),
        Command::Frontier { config, out } => {
            load_config(config).and_then(|cfg| run_frontier(&cfg, out))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
