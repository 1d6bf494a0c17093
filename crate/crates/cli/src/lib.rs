//! Command-line front end for the `nnilc` library: configuration loading,
//! experiment commands and machine-readable outputs.
//!
//! Exit codes are stable:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal failure |
//! | 2 | invalid configuration or input file |
//! | 3 | stability pre-check refused the design |
//! | 4 | simulation diverged |
//! | 5 | I/O failure while writing outputs |

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config_io;
pub mod output;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_UNSTABLE: u8 = 3;
pub const EXIT_DIVERGED: u8 = 4;
pub const EXIT_IO: u8 = 5;

/// Invalid configuration or input data.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// The convergence checks rejected the configured design.
#[derive(Debug)]
pub struct StabilityRefusal(pub String);

impl fmt::Display for StabilityRefusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unstable design: {}", self.0)
    }
}

impl std::error::Error for StabilityRefusal {}

/// Maps an error chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<StabilityRefusal>() {
            return EXIT_UNSTABLE;
        }
        if let Some(e) = cause.downcast_ref::<nnilc::Error>() {
            return match e {
                nnilc::Error::ConvergencePrecheck(_) => EXIT_UNSTABLE,
                nnilc::Error::Diverged { .. }
                | nnilc::Error::Instability { .. }
                | nnilc::Error::NonFinite { .. }
                | nnilc::Error::Numerical(_) => EXIT_DIVERGED,
                _ => EXIT_CONFIG,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_INTERNAL
}

#[derive(Debug, Parser)]
#[command(name = "nnilc", version, about = "Neural-network-augmented ILC for friction compensation (simulation)")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the configuration.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run `schedule.mode` on the schedule; write per-trial traces and a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Trained model for `ilc_with_nn` (omitted: linear warm start only).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Build the training corpus with conventional ILC over the frequency grid.
    BuildCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train the network on a corpus file.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus CSV written by `build-corpus`.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run conventional and NN-augmented ILC on the schedule with paired seeds.
    RunExperiment {
        #[command(flatten)]
        common: Common,
        /// Trained model (omitted: linear warm start only, flagged in the summary).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate both convergence conditions and write the margin curves.
    CheckStability {
        #[command(flatten)]
        common: Common,
    },
    /// Print the documented default configuration.
    PrintDefaults,
}

/// Runs one command; returns the paths written.
pub fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Simulate { common, model } => commands::simulate(&common, model.as_deref()),
        Command::BuildCorpus { common } => commands::build_corpus(&common),
        Command::Train { common, corpus } => commands::train(&common, &corpus),
        Command::RunExperiment { common, model } => commands::run_experiment(&common, model.as_deref()),
        Command::CheckStability { common } => commands::check_stability(&common),
        Command::PrintDefaults => {
            print!("{}", config_io::documented_defaults()?);
            Ok(Vec::new())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_chain() {
        let e = anyhow::Error::new(ConfigError("bad".into()));
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        let e = anyhow::Error::new(nnilc::Error::ConvergencePrecheck("x".into())).context("running");
        assert_eq!(exit_code(&e), EXIT_UNSTABLE);
        let e = anyhow::Error::new(nnilc::Error::Diverged { step: 3 });
        assert_eq!(exit_code(&e), EXIT_DIVERGED);
        let e = anyhow::Error::new(std::io::Error::other("disk")).context("writing");
        assert_eq!(exit_code(&e), EXIT_IO);
        assert_eq!(exit_code(&anyhow::anyhow!("?")), EXIT_INTERNAL);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
