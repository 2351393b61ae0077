use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metrovuln_cli::{MissingArtifact, Overrides, PipelineConfig, Session, Stage};

#[derive(Parser)]
#[command(name = "metrovuln", version, about = "Station vulnerability to metro service disruptions")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and run.log.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding (or receiving) the input tables.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    interval_min: Option<u32>,
    /// Minimum incident length, minutes.
    #[arg(long, global = true)]
    threshold_min: Option<i64>,
    /// Controls per treated unit.
    #[arg(long, global = true)]
    match_m: Option<usize>,
    #[arg(long, global = true)]
    kl_eps: Option<f64>,
    #[arg(long, global = true)]
    trees: Option<usize>,
    /// Choose propensity terms by likelihood-ratio forward selection.
    #[arg(long, global = true)]
    select: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scenario into the data directory.
    Generate,
    Panel,
    Propensity,
    Match,
    Estimate,
    Impute,
    Report,
    /// Every analysis stage, panel through report.
    All,
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let f = cli.flags;
    let mut cfg = match &f.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: f.seed,
        out: f.out,
        data: f.data,
        interval_min: f.interval_min,
        threshold_min: f.threshold_min,
        match_m: f.match_m,
        kl_eps: f.kl_eps,
        trees: f.trees,
        select: f.select,
    })?;
    let stage = match cli.command {
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::All => return Session::new(cfg).run_all(),
        Command::Generate => Stage::Generate,
        Command::Panel => Stage::Panel,
        Command::Propensity => Stage::Propensity,
        Command::Match => Stage::Match,
        Command::Estimate => Stage::Estimate,
        Command::Impute => Stage::Impute,
        Command::Report => Stage::Report,
    };
    Session::new(cfg).run(stage).map(drop)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<MissingArtifact>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
