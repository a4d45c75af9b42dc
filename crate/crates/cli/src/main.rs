mod commands;
mod plot;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turbda_core::turbsim::Domain;

/// Turbulence mitigation experiments: simulate data, train, restore, score.
#[derive(Debug, Parser)]
#[command(name = "turbda", version)]
pub struct Cli {
    /// Every run creates a timestamped directory under this root.
    #[arg(long, global = true, default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade a directory of clean PNGs into a dataset with a manifest.
    Simulate {
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        count: usize,
        /// synthetic or proxy_real
        #[arg(long, default_value = "synthetic")]
        domain: Domain,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<run dir>/dataset`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// TOML file with simulator settings (a `[sim]` table).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train from a config file, or continue from a checkpoint.
    Train {
        #[arg(long, required_unless_present = "resume")]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set epochs=3 --set net.base_channels=16`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Restore every PNG in a directory with a trained generator.
    Restore {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input_dir: PathBuf,
        /// Defaults to `<run dir>/restored`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score restored images, with references when available.
    Evaluate {
        #[arg(long)]
        restored_dir: PathBuf,
        #[arg(long)]
        reference_dir: Option<PathBuf>,
    },
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    use turbda_core::Error;
    let validation = err.chain().any(|e| {
        e.downcast_ref::<Error>()
            .is_some_and(|e| matches!(e, Error::Config(_) | Error::Param(_)))
            || e.downcast_ref::<commands::UsageError>().is_some()
    });
    if validation {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Joins the error chain, dropping causes the outer message already quotes.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
