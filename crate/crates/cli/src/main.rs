use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod run;

use config::Task;
use run::Failure;

/// Information estimates for ensembles of 1D phase profiles.
#[derive(Debug, Parser)]
#[command(name = "fieldinfo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(flatten)]
    Task(Task),
    /// Replay a stored `*.config.json`.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write to this path instead of the stored one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Task(task) => run::execute(&task),
        Command::Run { config, out } => fieldinfo::io::read_document::<Task>(&config, "run_config")
            .map_err(Failure::from)
            .and_then(|doc| {
                let mut task = doc.body;
                if let Some(out) = out {
                    task.set_out(out);
                }
                run::execute(&task)
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
