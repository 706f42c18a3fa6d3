//! Command-line driver: simulate data, fit the mixture, analyze the MAP
//! state and write a report.

pub mod commands;
pub mod config;
pub mod report;

use anyhow::{Context, Result};

pub use commands::{cmd_analyze, cmd_fit, cmd_report, cmd_simulate};
pub use config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Analyze,
    Report,
}

/// Runs one command inside a thread pool sized by `cfg.workers` (all cores
/// when unset).
pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        anyhow::ensure!(n > 0, "invalid config: workers must be positive");
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("cannot start worker pool")?;
    pool.install(|| match command {
        Command::Simulate => cmd_simulate(cfg),
        Command::Fit => cmd_fit(cfg),
        Command::Analyze => cmd_analyze(cfg),
        Command::Report => cmd_report(cfg).map(|_| ()),
    })
}
