use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mps_cli::{run, Command, RunConfig};

#[derive(Parser)]
#[command(
    name = "mps",
    version,
    about = "Multiple policy space model: clustered probit IRT"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate responses from a mixture of IRT models.
    Simulate(Overrides),
    /// Run the Gibbs sampler and keep the MAP state.
    Fit(Overrides),
    /// Sub-cluster correlation graph, gap statistic, communities, regression.
    Analyze(Overrides),
    /// Summarize a run directory as markdown.
    Report(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "MPS_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    /// CSV of unit_id,cluster pins.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// CSV of unit_id followed by covariate columns.
    #[arg(long)]
    covariates: Option<PathBuf>,
}

impl Overrides {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = Some(v);
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if let Some(v) = self.truncation {
            cfg.truncation = v;
        }
        if let Some(v) = self.iters {
            cfg.n_iter = v;
        }
        if let Some(v) = self.burnin {
            cfg.burn_in = Some(v);
        }
        if let Some(v) = self.constraints {
            cfg.constraints = Some(v);
        }
        if let Some(v) = self.covariates {
            cfg.covariates = Some(v);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, overrides) = match cli.command {
        Cmd::Simulate(o) => (Command::Simulate, o),
        Cmd::Fit(o) => (Command::Fit, o),
        Cmd::Analyze(o) => (Command::Analyze, o),
        Cmd::Report(o) => (Command::Report, o),
    };
    match overrides.resolve().and_then(|cfg| run(command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
