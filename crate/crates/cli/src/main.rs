use std::path::PathBuf;
use std::process::ExitCode;

use bastrnn::par::Execution;
use bastrnn::pipeline::{self, RunConfig, Session};
use clap::{Args, Parser, Subcommand};

/// Bayesian spatio-temporal recurrent network forecasting.
#[derive(Parser, Debug)]
#[command(name = "bastrnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the data-parallel loops on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the two-scale Lorenz-96 system.
    SimulateLorenz(Common),
    /// Fit an EOF basis and write coefficient series.
    Eof(Common),
    /// Select the embedding (tau, m) by validation MSPE.
    CvEmbed(Common),
    /// Sample the posterior on the training span.
    Fit(Common),
    /// Forecast the held-out span from saved draws.
    Forecast(Common),
    /// Fit and forecast the comparison models.
    Baseline(Common),
    /// Score the configured models on the held-out span.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Report CRPS averaged over cells instead of summed.
        #[arg(long)]
        average: bool,
    },
}

fn session(c: &Common, average: bool) -> anyhow::Result<Session> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.override_seed(seed);
    }
    cfg.evaluate.average |= average;
    let exec = if c.sequential { Execution::Sequential } else { Execution::Parallel };
    Ok(Session::new(cfg, c.out.clone(), exec)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, average) = match &cli.command {
        Command::Evaluate { common, average } => (common, *average),
        Command::SimulateLorenz(c)
        | Command::Eof(c)
        | Command::CvEmbed(c)
        | Command::Fit(c)
        | Command::Forecast(c)
        | Command::Baseline(c) => (c, false),
    };
    let s = session(common, average)?;
    log::info!("config hash {}", s.config_hash());
    let mut written = vec![s.save_config()?];
    written.extend(match cli.command {
        Command::SimulateLorenz(_) => pipeline::simulate_lorenz(&s),
        Command::Eof(_) => pipeline::eof(&s),
        Command::CvEmbed(_) => pipeline::cv_embed(&s),
        Command::Fit(_) => pipeline::fit(&s),
        Command::Forecast(_) => pipeline::forecast_bastrnn(&s),
        Command::Baseline(_) => pipeline::baseline(&s),
        Command::Evaluate { .. } => pipeline::evaluate(&s),
    }?);
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already carry their causes in the message
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
