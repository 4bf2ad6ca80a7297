use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use met_cli::{report_file, run_file, CliError, Format};

/// Reproducible experiments for the multiplicative ergodic theorem.
#[derive(Parser)]
#[command(name = "met", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output path; defaults to the config's `output` key, then to the config path with a csv/json extension.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Summarise a result file and evaluate its stored checks.
    Report { result: PathBuf },
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("met: {e}");
    ExitCode::from(e.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, output, format } => match run_file(&config, output, format) {
            Ok((path, table)) => {
                eprintln!("met: wrote {} rows to {}", table.rows.len(), path.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Report { result } => match report_file(&result) {
            Ok((text, all_pass)) => {
                print!("{text}");
                if all_pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => fail(e),
        },
    }
}
