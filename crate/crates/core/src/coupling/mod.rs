//! Coupling of the Markovized process Y with the physical process X.
//!
//! Both are driven by the same draws; they agree until the first flight `j`
//! whose fresh scatterer would already have been met by the past path
//! (shadowed, `η̂_j`) or whose path meets an earlier scatterer
//! (recollision, `η̃_j`). X is stopped at the fresh collision before that.

mod index;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use index::{PointIndex, TrajectoryIndex};

use crate::error::{Error, Result};
use crate::geometry::{min_distance_point_to_arc, PlanarVector};
use crate::markovized::{simulate_markovized, MarkovizedRun};
use crate::randomness::{mix_seed, RandomStream, UniformSource};
use crate::stats::{wilson_interval, Z95};

/// Which points stand in for the scatterers in the proximity tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MismatchMode {
    /// Distances to the fresh collision points `Y_i`.
    #[default]
    CollisionPoints,
    /// Distances to the scatterer centers `Y_i − ε n_i`.
    ScattererCenters,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchFlags {
    pub j: usize,
    /// Shadowed scattering.
    pub eta_hat: bool,
    /// Recollision with an earlier scatterer.
    pub eta_tilde: bool,
    pub eta: bool,
}

impl MismatchFlags {
    pub fn new(j: usize, eta_hat: bool, eta_tilde: bool) -> Self {
        Self {
            j,
            eta_hat,
            eta_tilde,
            eta: eta_hat || eta_tilde,
        }
    }
}

/// Point standing for the scatterer met at the fresh collision ending
/// flight `i` (`i = 0` is the start). `None` when the run stops before the
/// scatterer is determined.
pub fn scatterer_point(run: &MarkovizedRun, i: usize, mode: MismatchMode) -> Option<PlanarVector> {
    let rec = &run.records[i];
    match mode {
        MismatchMode::CollisionPoints => Some(rec.position),
        MismatchMode::ScattererCenters => {
            let next = run.records.get(i + 1)?;
            let normal = PlanarVector::unit(rec.phi + 0.5 * next.draw.alpha).perp();
            Some(rec.position - normal * run.eps)
        }
    }
}

fn require_arcs(run: &MarkovizedRun) -> Result<()> {
    if run.n_segments() > 0 && run.arcs.is_empty() {
        return Err(Error::InvalidParameter("mismatch detection needs interpolated arcs".into()));
    }
    Ok(())
}

/// Flags for flights `1..=n`, computed with a spatial hash of the past path.
pub fn detect_mismatches(run: &MarkovizedRun, mode: MismatchMode) -> Result<Vec<MismatchFlags>> {
    require_arcs(run)?;
    let eps = run.eps;
    let cell = 4.0 * eps;
    let mut past = TrajectoryIndex::new(cell);
    let mut points = PointIndex::new(cell);
    let mut out = Vec::with_capacity(run.n_segments());
    for j in 1..=run.n_segments() {
        // past holds flights 1..j-1, points holds scatterers 0..j-2
        let eta_hat = scatterer_point(run, j, mode)
            .map(|b| past.nearest_within(b, eps).is_some())
            .unwrap_or(false);
        let eta_tilde = run.segment(j).iter().any(|a| !points.near_arc(a, eps).is_empty());
        out.push(MismatchFlags::new(j, eta_hat, eta_tilde));
        for a in run.segment(j) {
            past.insert(*a);
        }
        if let Some(b) = scatterer_point(run, j - 1, mode) {
            points.insert(j - 1, b);
        }
    }
    Ok(out)
}

/// Same flags by scanning every pair; quadratic in the run length.
pub fn detect_mismatches_brute(run: &MarkovizedRun, mode: MismatchMode) -> Result<Vec<MismatchFlags>> {
    require_arcs(run)?;
    let eps = run.eps;
    let n = run.n_segments();
    let mut out = Vec::with_capacity(n);
    for j in 1..=n {
        let eta_hat = match scatterer_point(run, j, mode) {
            Some(b) => (1..j).any(|k| run.segment(k).iter().any(|a| min_distance_point_to_arc(b, a) < eps)),
            None => false,
        };
        let eta_tilde = (0..j.saturating_sub(1)).any(|i| match scatterer_point(run, i, mode) {
            Some(b) => run.segment(j).iter().any(|a| min_distance_point_to_arc(b, a) < eps),
            None => false,
        });
        out.push(MismatchFlags::new(j, eta_hat, eta_tilde));
    }
    Ok(out)
}

/// Index of the first flagged flight.
pub fn stopping_time(flags: &[MismatchFlags]) -> Option<usize> {
    flags.iter().find(|f| f.eta).map(|f| f.j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledRun {
    pub y: MarkovizedRun,
    pub flags: Vec<MismatchFlags>,
    /// First mismatch; `None` when Y runs to its horizon without one.
    pub rho_stop: Option<usize>,
    /// Time up to which X is defined: `τ_{ρ−1}`, or the end of Y.
    pub stop_time: f64,
    /// Physical process: the records and arcs of Y before `stop_time`.
    pub x: MarkovizedRun,
}

impl CoupledRun {
    /// `τ_ρ`, the fresh collision at which the mismatch takes effect.
    pub fn mismatch_time(&self) -> Option<f64> {
        self.rho_stop.map(|r| self.y.records[r].tau)
    }

    pub fn x_position_at(&self, t: f64) -> Result<PlanarVector> {
        if self.rho_stop.is_some() && t >= self.stop_time {
            return Err(Error::TimeOutOfRange { t, end: self.stop_time });
        }
        self.x.position_at(t)
    }
}

fn truncate(y: &MarkovizedRun, last: usize) -> MarkovizedRun {
    let n_arcs = y.segment_arcs[last].end;
    MarkovizedRun {
        eps: y.eps,
        records: y.records[..=last].to_vec(),
        arcs: y.arcs[..n_arcs].to_vec(),
        segment_arcs: y.segment_arcs[..=last].to_vec(),
    }
}

pub fn couple(y: MarkovizedRun, mode: MismatchMode) -> Result<CoupledRun> {
    let flags = detect_mismatches(&y, mode)?;
    let rho_stop = stopping_time(&flags);
    let last = rho_stop.map_or(y.n_segments(), |r| r - 1);
    let x = truncate(&y, last);
    let stop_time = y.records[last].tau;
    Ok(CoupledRun {
        y,
        flags,
        rho_stop,
        stop_time,
        x,
    })
}

pub fn coupled_run<S: UniformSource + ?Sized>(
    eps: f64,
    t_end: f64,
    s: &mut S,
    mode: MismatchMode,
) -> Result<CoupledRun> {
    couple(simulate_markovized(t_end, eps, s)?, mode)
}

/// What ended the coupling of one census run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: u64,
    pub rho_stop: Option<usize>,
    pub stop_time: f64,
    /// `τ_ρ`
    pub mismatch_time: Option<f64>,
    pub shadowed: bool,
    pub recollision: bool,
    pub location: Option<PlanarVector>,
}

impl RunOutcome {
    pub fn mismatched_by(&self, t: f64) -> bool {
        self.mismatch_time.is_some_and(|m| m <= t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub eps: f64,
    pub t_end: f64,
    pub n_runs: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_shadow: f64,
    pub p_recollide: f64,
    pub outcomes: Vec<RunOutcome>,
}

const CENSUS_TAG: u64 = 0x636f_7570;

/// Stream of census run `run` at grid position `eps_index`.
pub fn census_stream(seed: u64, eps_index: u64, run: u64) -> RandomStream {
    RandomStream::new(mix_seed(seed, CENSUS_TAG ^ eps_index), run)
}

pub fn run_outcome(c: &CoupledRun, run: u64) -> RunOutcome {
    let flag = c.rho_stop.map(|r| c.flags[r - 1]);
    RunOutcome {
        run,
        rho_stop: c.rho_stop,
        stop_time: c.stop_time,
        mismatch_time: c.mismatch_time(),
        shadowed: flag.is_some_and(|f| f.eta_hat),
        recollision: flag.is_some_and(|f| f.eta_tilde),
        location: c.rho_stop.map(|r| c.y.records[r].position),
    }
}

/// Empirical `P(τ_ρ ≤ T)` per ε with 95% Wilson intervals, split by the
/// type of the first mismatch (a flight can be both).
pub fn mismatch_census(
    eps_grid: &[f64],
    t_end: f64,
    n_runs: u64,
    seed: u64,
    mode: MismatchMode,
) -> Result<Vec<CensusRow>> {
    eps_grid
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let outcomes = (0..n_runs)
                .into_par_iter()
                .map(|r| {
                    let mut s = census_stream(seed, k as u64, r);
                    coupled_run(eps, t_end, &mut s, mode).map(|c| run_outcome(&c, r))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(census_row(eps, t_end, outcomes))
        })
        .collect()
}

pub fn census_row(eps: f64, t_end: f64, outcomes: Vec<RunOutcome>) -> CensusRow {
    let n = outcomes.len() as u64;
    let hit: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.mismatched_by(t_end)).collect();
    let k = hit.len() as u64;
    let (ci_lo, ci_hi) = wilson_interval(k, n, Z95);
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    CensusRow {
        eps,
        t_end,
        n_runs: n,
        p_hat: frac(k as usize),
        ci_lo,
        ci_hi,
        p_shadow: frac(hit.iter().filter(|o| o.shadowed).count()),
        p_recollide: frac(hit.iter().filter(|o| o.recollision).count()),
        outcomes,
    }
}
