//! Experiment configuration: defaults, then a `key = value` file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maglorentz::coupling::MismatchMode;
use maglorentz::legs_green::LegsMode;
use maglorentz::physical_mlp::TrapCutoffs;
use maglorentz::stats::ProcessKind;
use serde::Serialize;

use crate::CliError;

pub const OUTPUT_ENV: &str = "MLP_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "mlp-output";

const KEYS: &[&str] = &[
    "eps",
    "eps_grid",
    "rho",
    "T",
    "runs",
    "seed",
    "output_dir",
    "mismatch",
    "legs",
    "process",
    "packs",
    "r_max",
    "t_max",
    "escape_radius",
    "cage_radius",
    "svg",
    "input",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub eps: f64,
    pub eps_grid: Vec<f64>,
    /// Scatterer intensity; `2/ε` unless given.
    pub rho: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub n_runs: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mismatch: MismatchMode,
    pub legs: LegsMode,
    pub process: ProcessKind,
    pub n_packs: usize,
    /// Outer radius of the occupation-measure bins.
    pub r_max: f64,
    pub cutoffs: TrapCutoffs,
    pub svg: bool,
    pub input: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_pairs(&text)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_legs(v: &str) -> Result<LegsMode, CliError> {
    match v.split_once(':') {
        None if v == "exact" => Ok(LegsMode::Exact),
        Some(("cheap", d)) => Ok(LegsMode::Cheap { delta: num("legs", d)? }),
        _ => Err(CliError::Config(format!("legs: expected exact or cheap:<δ>, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn resolve(command: &str, pairs: &BTreeMap<String, String>) -> Result<Self, CliError> {
        if let Some(k) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let eps: f64 = get("eps").map(|v| num("eps", v)).transpose()?.unwrap_or(0.01);
        let eps_grid = match get("eps_grid") {
            Some(v) => v.split(',').map(|x| num("eps_grid", x.trim())).collect::<Result<Vec<f64>, _>>()?,
            None => vec![0.02, 0.01, 0.005],
        };
        let rho = get("rho").map(|v| num("rho", v)).transpose()?.unwrap_or(2.0 / eps);
        let mut cutoffs = TrapCutoffs::default();
        if let Some(v) = get("escape_radius") {
            cutoffs.r_max = num("escape_radius", v)?;
        }
        if let Some(v) = get("t_max") {
            cutoffs.t_max = num("t_max", v)?;
        }
        if let Some(v) = get("cage_radius") {
            cutoffs.cage_radius = num("cage_radius", v)?;
        }
        let output_dir = get("output_dir")
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
        let cfg = Self {
            command: command.to_string(),
            eps,
            eps_grid,
            rho,
            t_end: get("T").map(|v| num("T", v)).transpose()?.unwrap_or(10.0),
            n_runs: get("runs").map(|v| num("runs", v)).transpose()?.unwrap_or(1000),
            seed: get("seed").map(|v| num("seed", v)).transpose()?.unwrap_or(1),
            output_dir,
            mismatch: match get("mismatch").unwrap_or("points") {
                "points" => MismatchMode::CollisionPoints,
                "centers" => MismatchMode::ScattererCenters,
                v => return Err(CliError::Config(format!("mismatch: expected points or centers, got {v:?}"))),
            },
            legs: get("legs").map(parse_legs).transpose()?.unwrap_or(LegsMode::Cheap { delta: 0.05 }),
            process: match get("process").unwrap_or("limit") {
                "limit" => ProcessKind::Limit,
                "markovized" => ProcessKind::Markovized,
                "coupled" => ProcessKind::Coupled,
                v => return Err(CliError::Config(format!("process: expected limit, markovized or coupled, got {v:?}"))),
            },
            n_packs: get("packs").map(|v| num("packs", v)).transpose()?.unwrap_or(200),
            r_max: get("r_max").map(|v| num("r_max", v)).transpose()?.unwrap_or(1e4),
            cutoffs,
            svg: get("svg").map(|v| num("svg", v)).transpose()?.unwrap_or(false),
            input: get("input").map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("eps must lie in (0, 0.5), got {}", self.eps));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
            return bad(format!("eps_grid entries must lie in (0, 0.5), got {:?}", self.eps_grid));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be finite and nonnegative, got {}", self.rho));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_end));
        }
        if self.n_runs == 0 {
            return bad("runs must be positive".into());
        }
        if !(self.r_max > 1.0 && self.r_max.is_finite()) {
            return bad(format!("r_max must exceed 1, got {}", self.r_max));
        }
        if self.command == "plot" && self.input.is_none() {
            return bad("plot needs --input".into());
        }
        Ok(())
    }
}
