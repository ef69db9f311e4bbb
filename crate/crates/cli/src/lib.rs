//! Command-line front-end for `bayes-pce` runs.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bayes-pce", version, about = "Bayesian sparse PCE surrogates, sequential design and model validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the study described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parse and check a config file without running it.
    ValidateConfig { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<config::RunConfig, run::RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| run::RunError::Config(config::ConfigError { path: String::new(), message: format!("{}: {e}", path.display()) }))?;
    config::parse(&text).map_err(run::RunError::Config)
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::ValidateConfig { config } => load(&config).and_then(|c| {
            c.validate()?;
            println!("config ok: mode {:?}, config sha256 {}", c.mode, run::config_hash(&c));
            Ok(())
        }),
        Command::Run { config, seed, output_dir } => load(&config).and_then(|mut c| {
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(d) = output_dir {
                c.output_dir = d;
            }
            let outcome = run::execute(&c)?;
            for line in &outcome.summary {
                println!("{line}");
            }
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
