//! `vamnar`: simulate panels, fit value-added models, and compare fits.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vamnar::model::{ModelKind, SelectionParameterization};
use vamnar::panel::YEARS;

use vamnar_cli::commands;
use vamnar_cli::config::RunConfig;
use vamnar_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "vamnar",
    version,
    about = "Teacher value-added models for incomplete score panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel and its truth file.
    Simulate(Common),
    /// Run MCMC chains and write draws, summaries and diagnostics.
    Fit(Common),
    /// Score weights by number of observed scores and per classroom.
    Weights {
        #[command(flatten)]
        common: Common,
        /// Summary file providing posterior means of nu and sigma[t].
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        nu: Option<f64>,
        /// Five comma-separated residual SDs.
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
    },
    /// Compare fit output directories; the first is the baseline.
    Compare {
        #[command(flatten)]
        common: Common,
        runs: Vec<PathBuf>,
    },
    /// Describe a panel and optionally summarize a draws file.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    panel: Option<PathBuf>,
    /// mar, sel, sel2 or pmix.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    retained: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Minimum students for a pattern-mixture group of its own.
    #[arg(long)]
    pattern_threshold: Option<usize>,
    /// Use the cumulative-logit count model instead of the continuation ratio.
    #[arg(long)]
    cumulative: bool,
    /// Panel `Y` holds raw scale scores.
    #[arg(long)]
    raw_scores: bool,
    #[arg(long)]
    strict: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.panel {
            cfg.panel = Some(v.clone());
        }
        if let Some(v) = &self.model {
            cfg.model.kind = ModelKind::parse(v)?;
        }
        let s = &mut cfg.model.sampler;
        if let Some(v) = self.chains {
            s.chains = v;
        }
        if let Some(v) = self.burn_in {
            s.burn_in = v;
        }
        if let Some(v) = self.retained {
            s.retained = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.pattern_threshold {
            cfg.model.pattern_threshold = v;
        }
        if self.cumulative {
            cfg.model.parameterization = SelectionParameterization::Cumulative;
        }
        cfg.raw_scores |= self.raw_scores;
        cfg.strict |= self.strict;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            commands::simulate(&cfg)
        }
        Command::Fit(common) => {
            let cfg = common.resolve()?;
            cfg.validate()?;
            commands::fit_command(&cfg)
        }
        Command::Weights {
            common,
            summary,
            nu,
            sigma,
        } => {
            let mut cfg = common.resolve()?;
            if summary.is_some() {
                cfg.weights.summary = summary;
            }
            if nu.is_some() {
                cfg.weights.nu = nu;
            }
            if let Some(s) = sigma {
                let s: [f64; YEARS] = s
                    .try_into()
                    .map_err(|_| CliError::Config(format!("--sigma needs {YEARS} values")))?;
                cfg.weights.sigma = Some(s);
            }
            cfg.validate()?;
            commands::weights(&cfg)
        }
        Command::Compare { common, runs } => {
            let mut cfg = common.resolve()?;
            if !runs.is_empty() {
                cfg.compare.runs = runs;
            }
            cfg.validate()?;
            commands::compare(&cfg)
        }
        Command::Summarize { common, draws } => {
            let mut cfg = common.resolve()?;
            if draws.is_some() {
                cfg.summarize.draws = draws;
            }
            cfg.validate()?;
            commands::summarize(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
