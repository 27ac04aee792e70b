//! `specgrad` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use specgrad::diagnostics::RunManifest;
use specgrad::{Error, Result};
use specgrad_cli::commands;

#[derive(Parser)]
#[command(name = "specgrad", version, about = "Solver-in-the-loop attacks and adversarial training for neural operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample inputs and label them with the teacher solver.
    GenData(Io),
    /// Train a student operator on a dataset.
    Train(Io),
    /// Attack dataset inputs against a trained student.
    Attack(Io),
    /// Adversarial or random-constant training of a student.
    AdvTrain(Io),
    /// Out-of-distribution error table against a reference model.
    EvalOod(Io),
    /// Perturbation averages, periodicity scores and spectral reports.
    Diagnose(Io),
    /// Re-execute the command recorded in a run manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_file(command: &str, config: &Path, out: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::Io {
        path: config.to_path_buf(),
        source: e,
    })?;
    commands::run(command, config, &text, out)
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let (manifest, out) = match cli.command {
        Command::Rerun { manifest, out } => {
            let old = RunManifest::read(&manifest)?;
            if !commands::COMMANDS.contains(&old.command.as_str()) {
                return Err(Error::Format {
                    path: manifest,
                    detail: format!("unknown command {:?}", old.command),
                });
            }
            (commands::run(&old.command, &manifest, &old.config, &out)?, out)
        }
        Command::GenData(io) => (run_file("gen-data", &io.config, &io.out)?, io.out),
        Command::Train(io) => (run_file("train", &io.config, &io.out)?, io.out),
        Command::Attack(io) => (run_file("attack", &io.config, &io.out)?, io.out),
        Command::AdvTrain(io) => (run_file("adv-train", &io.config, &io.out)?, io.out),
        Command::EvalOod(io) => (run_file("eval-ood", &io.config, &io.out)?, io.out),
        Command::Diagnose(io) => (run_file("diagnose", &io.config, &io.out)?, io.out),
    };
    manifest.write(&out)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
