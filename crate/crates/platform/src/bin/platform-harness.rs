//! `platform-harness run <scenario.json>...`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platform::harness::{run_scenario, Scenario};

#[derive(Parser)]
#[command(
    name = "platform-harness",
    about = "Run end-to-end scenarios against a live platform"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenario files in order.
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Print reports as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let Cmd::Run { files, json } = Cli::parse().command;
    let mut failed = false;
    for file in files {
        let report = match Scenario::load(&file) {
            Ok(scenario) => run_scenario(&scenario).await,
            Err(e) => Err(e),
        };
        match report {
            Ok(report) => {
                failed |= !report.passed;
                if json {
                    println!(
                        "{}",
                        serde_json::to_string(&report).expect("report serializes")
                    );
                } else {
                    print!("{}", report.render());
                }
            }
            Err(e) => {
                eprintln!("ERROR {}: {e}", file.display());
                return ExitCode::from(2);
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
