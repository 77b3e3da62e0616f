//! `maglorentz` experiment runner.

mod commands;
mod config;
mod output;
mod svg;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{read_pairs, ExperimentConfig};
use output::Artifacts;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("simulation: {0}")]
    Sim(#[from] maglorentz::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Parser)]
#[command(name = "maglorentz", version, about = "Magnetic Lorentz gas experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $MLP_OUTPUT_DIR or ./mlp-output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Comma-separated list of ε values.
    #[arg(long = "eps-grid", global = true)]
    eps_grid: Option<String>,
    /// Scatterer intensity (default 2/ε).
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Time horizon.
    #[arg(long = "T", global = true)]
    t: Option<f64>,
    #[arg(long, global = true)]
    runs: Option<u64>,
    /// points or centers
    #[arg(long, global = true)]
    mismatch: Option<String>,
    /// exact or cheap:<δ>
    #[arg(long, global = true)]
    legs: Option<String>,
    /// limit, markovized or coupled
    #[arg(long, global = true)]
    process: Option<String>,
    #[arg(long, global = true)]
    packs: Option<usize>,
    #[arg(long = "r-max", global = true)]
    r_max: Option<f64>,
    /// Also render trajectories as SVG.
    #[arg(long, global = true)]
    svg: bool,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Trajectories of the limit process.
    Limit,
    /// Trajectories of the Markovized process.
    Markovized,
    /// Trajectories among random scatterers, with A/B/C/D labels.
    Physical,
    /// Mismatch census of the coupling over an ε grid.
    Couple,
    /// Free-orbit probability and scenario census.
    Traps,
    /// Occupation measures of the split chain.
    Green,
    /// Intra- and inter-leg mismatch rates.
    Legs,
    /// Invariance-principle test suite.
    Invariance,
    /// Render a stored trajectory as SVG.
    Plot,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Limit => "limit",
            Command::Markovized => "markovized",
            Command::Physical => "physical",
            Command::Couple => "couple",
            Command::Traps => "traps",
            Command::Green => "green",
            Command::Legs => "legs",
            Command::Invariance => "invariance",
            Command::Plot => "plot",
        }
    }
}

fn pairs(cli: &Cli) -> Result<BTreeMap<String, String>, CliError> {
    let mut p = match &cli.config {
        Some(path) => read_pairs(path)?,
        None => BTreeMap::new(),
    };
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            p.insert(k.to_string(), v);
        }
    };
    set("output_dir", cli.out.as_ref().map(|d| d.display().to_string()));
    set("seed", cli.seed.map(|x| x.to_string()));
    set("eps", cli.eps.map(|x| x.to_string()));
    set("eps_grid", cli.eps_grid.clone());
    set("rho", cli.rho.map(|x| x.to_string()));
    set("T", cli.t.map(|x| x.to_string()));
    set("runs", cli.runs.map(|x| x.to_string()));
    set("mismatch", cli.mismatch.clone());
    set("legs", cli.legs.clone());
    set("process", cli.process.clone());
    set("packs", cli.packs.map(|x| x.to_string()));
    set("r_max", cli.r_max.map(|x| x.to_string()));
    set("svg", cli.svg.then(|| "true".to_string()));
    set("input", cli.input.as_ref().map(|d| d.display().to_string()));
    Ok(p)
}

fn execute(command: Command, cfg: &ExperimentConfig, out: &mut Artifacts) -> Result<(), CliError> {
    out.json("config.json", cfg)?;
    match command {
        Command::Limit => commands::limit(cfg, out),
        Command::Markovized => commands::markovized(cfg, out),
        Command::Physical => commands::physical(cfg, out),
        Command::Couple => commands::couple(cfg, out),
        Command::Traps => commands::traps(cfg, out),
        Command::Green => commands::green(cfg, out),
        Command::Legs => commands::legs(cfg, out),
        Command::Invariance => commands::invariance(cfg, out),
        Command::Plot => commands::plot(cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match pairs(&cli).and_then(|p| ExperimentConfig::resolve(cli.command.name(), &p)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut out = match Artifacts::create(&cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = execute(cli.command, &cfg, &mut out);
    let err = result.as_ref().err().map(ToString::to_string);
    if let Err(e) = out.finish(err.as_deref()) {
        eprintln!("error: cannot write MANIFEST: {e}");
        return ExitCode::FAILURE;
    }
    match err {
        None => {
            println!("{}", out.dir().display());
            ExitCode::SUCCESS
        }
        Some(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
