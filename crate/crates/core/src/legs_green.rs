//! Regenerative structure of the Markovized process.
//!
//! A retrospective Bernoulli coin splits the ψ-chain into a regeneration
//! part of weight δ and a residual part. Runs between consecutive
//! regenerations at loop-free flights form i.i.d. packs (legs), whose end
//! points make a random walk. Occupation measures of the run, of single legs
//! and of the walk are estimated on annular bins.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{scatterer_point, MismatchMode, PointIndex, TrajectoryIndex};
use crate::error::{Error, Result};
use crate::geometry::{min_distance_point_to_arc, ArcSegment, PlanarVector};
use crate::markovized::{advance, doeblin_report_eps, interpolate_segment, MarkovizedRecord, MarkovizedRun, PsiState};
use crate::minorization::regeneration_coin;
use crate::randomness::{mix_seed, sample_alpha, sample_truncexp, sample_uniform_angle, PrimitiveDraw, RandomStream, UniformSource};
use crate::stats::{linear_fit, wilson_interval, LinearFit, Z95};

const COIN_TAG: u64 = 0x636f_696e;
const LEGS_TAG: u64 = 0x6c65_6773;

/// The computed δ is an infimum over a grid refined by golden section; the
/// coin uses a slightly smaller value so that `scale ≤ h` everywhere.
const DELTA_MARGIN: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LegsMode {
    /// Exact splitting: `P(b = 1 | step) = δπ / P`, so regenerated states are
    /// drawn from the regeneration measure independently of the past.
    Exact,
    /// Independent Bernoulli(δ) flags; packs are only approximately
    /// independent.
    Cheap { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStep {
    pub index: usize,
    pub psi: PsiState,
    pub b: bool,
    pub nu: u64,
    pub record: MarkovizedRecord,
}

/// Markovized chain with regeneration flags.
///
/// Flight 1 is drawn from the regeneration measure (`b_1 = 1`): ζ from
/// TruncExp(1, L), θ̃ uniform, no loops. Later flights follow the ordinary
/// kernel; the flag of a flight with `ζ < L` is an extra coin on a separate
/// stream, so the chain draws do not depend on the mode.
#[derive(Clone, Debug)]
pub struct SplitChain {
    eps: f64,
    mode: LegsMode,
    delta: f64,
    scale: f64,
    cutoff: f64,
    chain: RandomStream,
    coins: RandomStream,
    origin: MarkovizedRecord,
    prev: MarkovizedRecord,
    index: usize,
}

impl SplitChain {
    pub fn new(eps: f64, mode: LegsMode, chain: RandomStream) -> Result<Self> {
        let report = doeblin_report_eps(eps)?;
        let delta = match mode {
            LegsMode::Exact => DELTA_MARGIN * report.delta,
            LegsMode::Cheap { delta } => {
                if !(delta > 0.0 && delta <= 1.0) {
                    return Err(Error::InvalidParameter(format!("regeneration probability {delta} not in (0, 1]")));
                }
                delta
            }
        };
        let mass = -(-report.cutoff).exp_m1();
        let coins = chain.child(COIN_TAG, 0);
        Ok(Self {
            eps,
            mode,
            delta,
            scale: delta / (TAU * mass),
            cutoff: report.cutoff,
            chain,
            coins,
            origin: MarkovizedRecord::initial(0.0),
            prev: MarkovizedRecord::initial(0.0),
            index: 0,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Record 0: the origin, with the incoming direction that makes
    /// flight 1 consistent with its scattering angle.
    pub fn origin(&self) -> &MarkovizedRecord {
        &self.origin
    }

    /// Most recent record (the origin before the first step).
    pub fn last(&self) -> &MarkovizedRecord {
        &self.prev
    }

    pub fn next_step(&mut self) -> SplitStep {
        let (record, b) = if self.index == 0 {
            let zeta = sample_truncexp(&mut self.chain, self.cutoff).expect("cutoff is positive");
            let theta = sample_uniform_angle(&mut self.chain);
            let alpha = sample_alpha(&mut self.chain);
            let phi0 = theta - 0.5 * zeta - alpha;
            self.origin = MarkovizedRecord::initial(phi0);
            let draw = PrimitiveDraw { xi: zeta, alpha };
            (advance(phi0, draw, self.eps, &self.origin), true)
        } else {
            let draw = PrimitiveDraw::sample(&mut self.chain);
            let rec = advance(self.prev.phi, draw, self.eps, &self.prev);
            let u = self.coins.next_uniform();
            let b = match self.mode {
                LegsMode::Exact => {
                    let nu = rec.nu as f64;
                    let w = (nu + 1.0) * draw.alpha - nu * rec.beta;
                    rec.zeta < self.cutoff && regeneration_coin(self.scale, w, self.eps, u)
                }
                LegsMode::Cheap { delta } => u < delta,
            };
            (rec, b)
        };
        self.index += 1;
        self.prev = record;
        SplitStep {
            index: self.index,
            psi: record.psi,
            b,
            nu: record.nu,
            record,
        }
    }
}

/// `n_steps` flights of the split chain.
pub fn nummelin_run(eps: f64, n_steps: usize, mode: LegsMode, s: RandomStream) -> Result<Vec<SplitStep>> {
    let mut chain = SplitChain::new(eps, mode, s)?;
    Ok((0..n_steps).map(|_| chain.next_step()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pack {
    /// n ≥ 1
    pub index: usize,
    /// Γ_{n−1}: first flight of the pack.
    pub start_index: usize,
    /// Γ_n
    pub boundary: usize,
    /// γ_n = Γ_n − Γ_{n−1}
    pub gamma_len: usize,
    /// Θ_{n−1}
    pub start_time: f64,
    /// θ_n
    pub leg_duration: f64,
    /// Y_{n,0}
    pub start: PlanarVector,
    /// Σ_j y_{n,j}
    pub displacement: PlanarVector,
    /// Flight draws ξ_{n,j} (with their angles); empty unless kept.
    pub draws: Vec<PrimitiveDraw>,
    /// Flight displacements y_{n,j}; empty unless kept.
    pub steps: Vec<PlanarVector>,
}

impl Pack {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.leg_duration
    }

    pub fn end(&self) -> PlanarVector {
        self.start + self.displacement
    }
}

/// Streaming pack boundaries.
///
/// A pack starts at flight Γ_{n−1} and ends at flight Γ_n − 1, where Γ_n is
/// the first `j > Γ_{n−1}` with both flights `j−1` and `j` regenerated and
/// loop-free; it begins where the previous one ended, at `Y_{Γ_{n−1}−1}`.
#[derive(Clone, Debug)]
pub struct PackSplitter {
    keep_steps: bool,
    open: Pack,
    prev_ok: bool,
    last_position: PlanarVector,
    last_tau: f64,
    started: bool,
}

impl PackSplitter {
    pub fn new(keep_steps: bool) -> Self {
        Self {
            keep_steps,
            open: Self::empty(1, 1, 0.0, PlanarVector::ZERO),
            prev_ok: false,
            last_position: PlanarVector::ZERO,
            last_tau: 0.0,
            started: false,
        }
    }

    fn empty(index: usize, start_index: usize, start_time: f64, start: PlanarVector) -> Pack {
        Pack {
            index,
            start_index,
            boundary: 0,
            gamma_len: 0,
            start_time,
            leg_duration: 0.0,
            start,
            displacement: PlanarVector::ZERO,
            draws: Vec::new(),
            steps: Vec::new(),
        }
    }

    /// Pack currently being filled.
    pub fn open_pack(&self) -> &Pack {
        &self.open
    }

    /// Feeds flight `step.index` (consecutive from 1); returns the pack it
    /// closes, if any.
    pub fn push(&mut self, step: &SplitStep) -> Option<Pack> {
        let j = step.index;
        let ok = step.b && step.nu == 0;
        let mut closed = None;
        if self.started && j > self.open.start_index && self.prev_ok && ok {
            let next = Self::empty(self.open.index + 1, j, self.last_tau, self.last_position);
            let mut done = std::mem::replace(&mut self.open, next);
            done.boundary = j;
            closed = Some(done);
        }
        self.started = true;
        let y = step.record.position - self.last_position;
        let p = &mut self.open;
        p.gamma_len += 1;
        p.displacement = p.displacement + y;
        p.leg_duration = step.record.tau - p.start_time;
        if self.keep_steps {
            p.draws.push(step.record.draw);
            p.steps.push(y);
        }
        self.prev_ok = ok;
        self.last_position = step.record.position;
        self.last_tau = step.record.tau;
        closed
    }
}

/// Packs completed within `steps` (the trailing open pack is dropped).
pub fn decompose_packs(steps: &[SplitStep]) -> Vec<Pack> {
    let mut splitter = PackSplitter::new(true);
    steps.iter().filter_map(|s| splitter.push(s)).collect()
}

/// `Ξ_0 = 0, Ξ_n = Ξ_{n−1} + Σ_j y_{n,j}`.
pub fn endpoint_walk(packs: &[Pack]) -> Vec<PlanarVector> {
    let mut out = vec![PlanarVector::ZERO];
    for p in packs {
        let last = *out.last().unwrap();
        out.push(last + p.displacement);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OccupationKind {
    /// G: collision points `Y_k`, `τ_k < T`.
    G,
    /// H: time spent, `0 < t ≤ T`.
    H,
    /// g: collision points of one pack, relative to its start.
    PackG,
    /// h: time spent during one leg, relative to its start.
    PackH,
    /// R: leg end points `Ξ_k`, `Θ_k < T`.
    R,
}

impl OccupationKind {
    pub fn symbol(self) -> &'static str {
        match self {
            OccupationKind::G => "G",
            OccupationKind::H => "H",
            OccupationKind::PackG => "g",
            OccupationKind::PackH => "h",
            OccupationKind::R => "R",
        }
    }
}

/// Radial bins for occupation measures: fine near the origin (resolving
/// scale ε), then progressively coarser out to `r_max`.
pub fn default_edges(eps: f64, r_max: f64) -> Vec<f64> {
    let mut e = Vec::new();
    let mut push_range = |lo: f64, hi: f64, step: f64| {
        let n = ((hi - lo) / step).round() as usize;
        for k in 0..n {
            e.push(lo + step * k as f64);
        }
    };
    let fine = 0.5 * eps;
    let n_fine = (0.05 / fine).ceil();
    push_range(0.0, fine * n_fine, fine);
    let start = fine * n_fine;
    push_range(start, 0.5, (0.5 - start) / ((0.5 - start) / 0.025).round().max(1.0));
    push_range(0.5, 5.0, 0.25);
    push_range(5.0, 50.0, 2.5);
    let mut r = 50.0;
    while r < r_max {
        e.push(r);
        r *= 1.25;
    }
    e.push(r_max.max(50.0));
    e
}

/// Per-unit contributions to each bin, plus what fell beyond the last edge.
#[derive(Clone, Debug, PartialEq)]
struct Tally {
    bins: Vec<f64>,
    overflow: f64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self {
            bins: vec![0.0; n],
            overflow: 0.0,
        }
    }

    fn clear(&mut self) {
        self.bins.iter_mut().for_each(|b| *b = 0.0);
        self.overflow = 0.0;
    }

    fn add_point(&mut self, edges: &[f64], r: f64, w: f64) {
        let k = edges.partition_point(|&e| e <= r);
        if k == 0 {
            return;
        }
        match self.bins.get_mut(k - 1) {
            Some(b) if k < edges.len() => *b += w,
            _ => self.overflow += w,
        }
    }

    fn add_arc(&mut self, edges: &[f64], arc: &ArcSegment, origin: PlanarVector) {
        let d = (arc.center - origin).norm();
        let (rmin, rmax) = ((d - 1.0).abs(), d + 1.0);
        let mut inside = 0.0;
        let lo = edges.partition_point(|&e| e <= rmin).saturating_sub(1);
        for k in lo..edges.len() - 1 {
            if edges[k] > rmax {
                break;
            }
            let t = arc_time_in_annulus(arc, origin, edges[k], edges[k + 1]);
            self.bins[k] += t;
            inside += t;
        }
        self.overflow += (arc.swept - inside).max(0.0);
    }
}

/// Length of `[0, x]` covered by the periodic intervals `[2πk, 2πk + width]`.
fn periodic_cover(x: f64, width: f64) -> f64 {
    (x / TAU).floor() * width + x.rem_euclid(TAU).min(width)
}

/// Sweep during which the arc's distance from `origin` is at least `r`.
fn arc_time_beyond(arc: &ArcSegment, origin: PlanarVector, r: f64) -> f64 {
    let rel = arc.center - origin;
    let d = rel.norm();
    if d < 1e-15 {
        return if 1.0 >= r { arc.swept } else { 0.0 };
    }
    // |p − o|² = d² + 1 + 2d cos(θ − arg rel)
    let x = (r * r - d * d - 1.0) / (2.0 * d);
    if x <= -1.0 {
        return arc.swept;
    }
    if x > 1.0 {
        return 0.0;
    }
    let w = x.acos();
    let start = (arc.start_angle - (rel.arg() - w)).rem_euclid(TAU);
    periodic_cover(start + arc.swept, 2.0 * w) - periodic_cover(start, 2.0 * w)
}

/// Time the arc spends at distance in `[lo, hi)` from `origin`.
pub fn arc_time_in_annulus(arc: &ArcSegment, origin: PlanarVector, lo: f64, hi: f64) -> f64 {
    (arc_time_beyond(arc, origin, lo) - arc_time_beyond(arc, origin, hi)).max(0.0)
}

/// Occupation measure on annuli, averaged over independent units (runs
/// for G, H, R; packs for g, h).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub kind: OccupationKind,
    pub edges: Vec<f64>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    overflow_sum: f64,
    total_sum: f64,
    total_sq: f64,
    pub units: u64,
}

impl OccupationHistogram {
    pub fn new(kind: OccupationKind, edges: Vec<f64>) -> Self {
        let n = edges.len() - 1;
        Self {
            kind,
            edges,
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            overflow_sum: 0.0,
            total_sum: 0.0,
            total_sq: 0.0,
            units: 0,
        }
    }

    fn add_unit(&mut self, t: &Tally) {
        let mut total = t.overflow;
        for (k, &m) in t.bins.iter().enumerate() {
            self.sum[k] += m;
            self.sum_sq[k] += m * m;
            total += m;
        }
        self.overflow_sum += t.overflow;
        self.total_sum += total;
        self.total_sq += total * total;
        self.units += 1;
    }

    pub fn merge(&mut self, o: &Self) {
        for k in 0..self.sum.len() {
            self.sum[k] += o.sum[k];
            self.sum_sq[k] += o.sum_sq[k];
        }
        self.overflow_sum += o.overflow_sum;
        self.total_sum += o.total_sum;
        self.total_sq += o.total_sq;
        self.units += o.units;
    }

    pub fn n_bins(&self) -> usize {
        self.sum.len()
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.sum[k] / self.units.max(1) as f64
    }

    fn stderr_of(sum: f64, sq: f64, n: u64) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        let m = sum / nf;
        ((sq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt()
    }

    pub fn stderr(&self, k: usize) -> f64 {
        Self::stderr_of(self.sum[k], self.sum_sq[k], self.units)
    }

    pub fn area(&self, k: usize) -> f64 {
        std::f64::consts::PI * (self.edges[k + 1].powi(2) - self.edges[k].powi(2))
    }

    pub fn density(&self, k: usize) -> f64 {
        self.mass(k) / self.area(k)
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    /// Mass of the whole plane, including beyond the last edge.
    pub fn total_mass(&self) -> f64 {
        self.total_sum / self.units.max(1) as f64
    }

    pub fn total_stderr(&self) -> f64 {
        Self::stderr_of(self.total_sum, self.total_sq, self.units)
    }

    pub fn overflow_mass(&self) -> f64 {
        self.overflow_sum / self.units.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenConfig {
    pub eps: f64,
    pub mode: LegsMode,
    pub t_end: f64,
    pub n_runs: u64,
    pub seed: u64,
    pub edges: Vec<f64>,
}

/// Pack data kept by the Green's-function experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackSummary {
    pub run: u64,
    pub index: usize,
    pub gamma_len: usize,
    pub leg_duration: f64,
    pub displacement: PlanarVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenHistograms {
    pub visits: OccupationHistogram,
    pub time: OccupationHistogram,
    pub pack_visits: OccupationHistogram,
    pub leg_time: OccupationHistogram,
    pub leg_ends: OccupationHistogram,
    pub packs: Vec<PackSummary>,
    pub n_steps: u64,
    pub regenerations: u64,
    pub delta: f64,
}

impl GreenHistograms {
    fn new(edges: &[f64], delta: f64) -> Self {
        let h = |k| OccupationHistogram::new(k, edges.to_vec());
        Self {
            visits: h(OccupationKind::G),
            time: h(OccupationKind::H),
            pack_visits: h(OccupationKind::PackG),
            leg_time: h(OccupationKind::PackH),
            leg_ends: h(OccupationKind::R),
            packs: Vec::new(),
            n_steps: 0,
            regenerations: 0,
            delta,
        }
    }

    pub fn get(&self, kind: OccupationKind) -> &OccupationHistogram {
        match kind {
            OccupationKind::G => &self.visits,
            OccupationKind::H => &self.time,
            OccupationKind::PackG => &self.pack_visits,
            OccupationKind::PackH => &self.leg_time,
            OccupationKind::R => &self.leg_ends,
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.visits.merge(&o.visits);
        self.time.merge(&o.time);
        self.pack_visits.merge(&o.pack_visits);
        self.leg_time.merge(&o.leg_time);
        self.leg_ends.merge(&o.leg_ends);
        self.packs.extend_from_slice(&o.packs);
        self.n_steps += o.n_steps;
        self.regenerations += o.regenerations;
    }

    pub fn mean_gamma(&self) -> f64 {
        self.packs.iter().map(|p| p.gamma_len as f64).sum::<f64>() / self.packs.len().max(1) as f64
    }
}

pub fn legs_stream(seed: u64, run: u64) -> RandomStream {
    RandomStream::new(mix_seed(seed, LEGS_TAG), run)
}

/// One run of the split chain up to the first fresh collision at or after
/// `t_end`, tallying all five occupation measures.
pub fn green_run(cfg: &GreenConfig, run: u64) -> Result<GreenHistograms> {
    let eps = cfg.eps;
    let edges = &cfg.edges;
    if edges.len() < 2 || edges[0] != 0.0 {
        return Err(Error::InvalidParameter("bin edges must start at 0".into()));
    }
    let mut chain = SplitChain::new(eps, cfg.mode, legs_stream(cfg.seed, run))?;
    let mut out = GreenHistograms::new(edges, chain.delta());
    let n = edges.len() - 1;
    let reach = edges[n] + 2.0 + 3.0 * eps;
    let (mut g_run, mut h_run, mut r_run) = (Tally::new(n), Tally::new(n), Tally::new(n));
    let (mut g_pack, mut h_pack) = (Tally::new(n), Tally::new(n));
    let mut splitter = PackSplitter::new(false);
    let t_end = cfg.t_end;
    let mut last = *chain.last();
    loop {
        let step = chain.next_step();
        let prev = if step.index == 1 { *chain.origin() } else { last };
        out.n_steps += 1;
        out.regenerations += step.b as u64;
        if let Some(p) = splitter.push(&step) {
            out.pack_visits.add_unit(&g_pack);
            out.leg_time.add_unit(&h_pack);
            g_pack.clear();
            h_pack.clear();
            if p.end_time() < t_end {
                r_run.add_point(edges, p.end().norm(), 1.0);
            }
            out.packs.push(PackSummary {
                run,
                index: p.index,
                gamma_len: p.gamma_len,
                leg_duration: p.leg_duration,
                displacement: p.displacement,
            });
        }
        let rec = step.record;
        let start = splitter.open_pack().start;
        if rec.tau < t_end {
            g_run.add_point(edges, rec.position.norm(), 1.0);
        }
        g_pack.add_point(edges, (rec.position - start).norm(), 1.0);
        let near_origin = prev.tau < t_end && prev.position.norm() < reach;
        let near_start = (prev.position - start).norm() < reach;
        if near_origin || near_start {
            let arcs = interpolate_segment(&prev, rec.draw, eps)?;
            for a in &arcs {
                if near_origin && a.t0 < t_end {
                    let clipped = ArcSegment {
                        swept: a.swept.min(t_end - a.t0),
                        ..*a
                    };
                    h_run.add_arc(edges, &clipped, PlanarVector::ZERO);
                }
                if near_start {
                    h_pack.add_arc(edges, a, start);
                }
            }
        } else {
            h_pack.overflow += rec.draw.xi;
            if prev.tau < t_end {
                h_run.overflow += rec.draw.xi.min(t_end - prev.tau);
            }
        }
        last = rec;
        if rec.tau >= t_end {
            break;
        }
    }
    out.visits.add_unit(&g_run);
    out.time.add_unit(&h_run);
    out.leg_ends.add_unit(&r_run);
    Ok(out)
}

/// All runs of `cfg`, merged in run order.
pub fn green_experiment(cfg: &GreenConfig) -> Result<GreenHistograms> {
    green_experiment_runs(cfg, 0..cfg.n_runs)
}

pub fn green_experiment_runs(cfg: &GreenConfig, runs: impl Iterator<Item = u64>) -> Result<GreenHistograms> {
    let ids: Vec<u64> = runs.collect();
    let parts = ids
        .par_iter()
        .map(|&r| green_run(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let delta = parts.first().map(|p| p.delta).unwrap_or(0.0);
    let mut out = GreenHistograms::new(&cfg.edges, delta);
    for p in &parts {
        out.merge(p);
    }
    Ok(out)
}

pub fn occupation_measure(cfg: &GreenConfig, kind: OccupationKind) -> Result<OccupationHistogram> {
    Ok(green_experiment(cfg)?.get(kind).clone())
}

/// `∫_{r0}^{r1} min(1/ε, 1/r) 2πr dr + π(r1² − r0²)`: the near-field
/// profile integrated over an annulus.
pub fn near_profile_mass(eps: f64, r0: f64, r1: f64) -> f64 {
    let inner = (r1.min(eps).powi(2) - r0.min(eps).powi(2)) / (2.0 * eps);
    let outer = (r1 - r0.max(eps)).max(0.0);
    TAU * (inner + outer) + std::f64::consts::PI * (r1 * r1 - r0 * r0)
}

/// `∫_{r0}^{r1} e^{−cr} / r · 2πr dr`.
pub fn tail_profile_mass(c: f64, r0: f64, r1: f64) -> f64 {
    TAU * ((-c * r0).exp() - (-c * r1).exp()) / c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindBound {
    pub kind: OccupationKind,
    pub constant: f64,
    /// Bins where the held-out mass exceeds the fitted bound.
    pub violations: Vec<usize>,
    pub bins_checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenBoundReport {
    pub eps: f64,
    /// Exponential rate of the leg tail.
    pub tail_rate: f64,
    pub bounds: Vec<KindBound>,
    /// log-log slope of the g density over `0.05 ≤ r ≤ 0.5`.
    pub near_slope: LinearFit,
    /// G density at `r ≈ ε/2` over that at `r ≈ 2ε`.
    pub plateau_ratio: f64,
}

impl GreenBoundReport {
    pub fn all_hold(&self) -> bool {
        self.tail_rate > 0.0 && self.bounds.iter().all(|b| b.violations.is_empty())
    }
}

fn bin_containing(edges: &[f64], r: f64) -> Option<usize> {
    let k = edges.partition_point(|&e| e <= r);
    (k > 0 && k < edges.len()).then(|| k - 1)
}

fn tail_rate(g: &OccupationHistogram) -> f64 {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let total: f64 = (0..g.n_bins()).map(|k| g.mass(k)).sum();
    let mut acc = 0.0;
    for k in 0..g.n_bins() {
        acc += g.mass(k);
        // the tail: beyond the median of the leg's visits
        if acc > 0.5 * total && g.mass(k) > 0.0 && g.edges[k] >= 1.0 {
            xs.push(g.midpoint(k));
            ys.push(g.density(k).ln() + g.midpoint(k).ln());
        }
    }
    if xs.len() < 3 {
        return f64::NAN;
    }
    -linear_fit(&xs, &ys).slope
}

/// The first `n_packs` complete packs of `n_runs` independent chains, each
/// run stopped once it has closed its share.
pub fn pack_sample(eps: f64, mode: LegsMode, n_packs: usize, n_runs: u64, seed: u64) -> Result<Vec<PackSummary>> {
    let share = n_packs.div_ceil(n_runs.max(1) as usize);
    let parts = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut chain = SplitChain::new(eps, mode, legs_stream(seed, run))?;
            let mut splitter = PackSplitter::new(false);
            let mut out = Vec::with_capacity(share);
            while out.len() < share {
                if let Some(p) = splitter.push(&chain.next_step()) {
                    out.push(PackSummary {
                        run,
                        index: p.index,
                        gamma_len: p.gamma_len,
                        leg_duration: p.leg_duration,
                        displacement: p.displacement,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().take(n_packs).collect())
}

/// Fits the constants of the near-field-plus-tail bounds on `train` and
/// checks them on the independent `test` half.
pub fn check_green_bounds(eps: f64, train: &GreenHistograms, test: &GreenHistograms) -> GreenBoundReport {
    let rate = tail_rate(&train.pack_visits);
    let kinds = [
        OccupationKind::G,
        OccupationKind::H,
        OccupationKind::PackG,
        OccupationKind::PackH,
        OccupationKind::R,
    ];
    let bounds = kinds
        .iter()
        .map(|&kind| {
            let (tr, te) = (train.get(kind), test.get(kind));
            let profile = |k: usize| {
                let (r0, r1) = (tr.edges[k], tr.edges[k + 1]);
                let tail = if rate > 0.0 { tail_profile_mass(rate, r0, r1) } else { 0.0 };
                near_profile_mass(eps, r0, r1) + tail
            };
            let constant = (0..tr.n_bins())
                .map(|k| (tr.mass(k) + 3.0 * tr.stderr(k)) / profile(k))
                .fold(0.0, f64::max);
            let violations = (0..te.n_bins()).filter(|&k| te.mass(k) > constant * profile(k)).collect();
            KindBound {
                kind,
                constant,
                violations,
                bins_checked: te.n_bins(),
            }
        })
        .collect();

    let g = &train.pack_visits;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..g.n_bins() {
        let m = g.midpoint(k);
        if (0.05..=0.5).contains(&m) && g.mass(k) > 0.0 {
            xs.push(m.ln());
            ys.push(g.density(k).ln());
        }
    }
    let near_slope = if xs.len() >= 2 {
        linear_fit(&xs, &ys)
    } else {
        LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r2: f64::NAN,
        }
    };
    let big = &train.visits;
    let plateau_ratio = match (bin_containing(&big.edges, 0.5 * eps), bin_containing(&big.edges, 2.0 * eps)) {
        (Some(a), Some(b)) => big.density(a) / big.density(b),
        _ => f64::NAN,
    };
    GreenBoundReport {
        eps,
        tail_rate: rate,
        bounds,
        near_slope,
        plateau_ratio,
    }
}

/// Split-chain run up to the first collision at or after `t_end`, with
/// interpolated arcs, plus its legs as ranges of flights (the trailing one
/// possibly incomplete).
#[derive(Clone, Debug)]
pub struct LegRun {
    pub run: MarkovizedRun,
    pub legs: Vec<std::ops::Range<usize>>,
    /// Number of leading legs that are complete.
    pub complete: usize,
}

pub fn leg_run(eps: f64, mode: LegsMode, stop: impl Fn(&SplitStep, usize) -> bool, s: RandomStream) -> Result<LegRun> {
    let mut chain = SplitChain::new(eps, mode, s)?;
    let mut splitter = PackSplitter::new(false);
    let mut records = Vec::new();
    let mut arcs = Vec::new();
    let mut segment_arcs = vec![0..0];
    let mut legs = Vec::new();
    loop {
        let step = chain.next_step();
        let prev = if step.index == 1 {
            records.push(*chain.origin());
            *chain.origin()
        } else {
            *records.last().unwrap()
        };
        if let Some(p) = splitter.push(&step) {
            legs.push(p.start_index..p.boundary);
        }
        let a0 = arcs.len();
        arcs.extend(interpolate_segment(&prev, step.record.draw, eps)?);
        segment_arcs.push(a0..arcs.len());
        records.push(step.record);
        if stop(&step, legs.len()) {
            break;
        }
    }
    let complete = legs.len();
    let open = splitter.open_pack().start_index;
    if open < records.len() {
        legs.push(open..records.len());
    }
    Ok(LegRun {
        run: MarkovizedRun {
            eps,
            records,
            arcs,
            segment_arcs,
        },
        legs,
        complete,
    })
}

/// Mismatch flags of one flight split by where the offending object lies:
/// inside the flight's own leg (from the leg's starting point on) or in an
/// earlier leg.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegFlight {
    pub j: usize,
    pub leg: usize,
    pub intra_hat: bool,
    pub intra_tilde: bool,
    /// Recollision with the scatterer of flight `j − 2`.
    pub direct: bool,
    /// Recollision with an older scatterer of the same leg.
    pub distant_tilde: bool,
    pub inter_hat: bool,
    pub inter_tilde: bool,
}

impl LegFlight {
    pub fn intra(&self) -> bool {
        self.intra_hat || self.intra_tilde
    }

    pub fn inter(&self) -> bool {
        self.inter_hat || self.inter_tilde
    }

    /// Intra-leg mismatch other than a recollision two flights back.
    pub fn distant(&self) -> bool {
        self.intra_hat || self.distant_tilde
    }
}

/// Per-flight intra/inter flags for the legs of `lr`.
pub fn leg_flags(lr: &LegRun, mode: MismatchMode) -> Result<Vec<LegFlight>> {
    let run = &lr.run;
    if run.n_segments() > 0 && run.arcs.is_empty() {
        return Err(Error::InvalidParameter("leg flags need interpolated arcs".into()));
    }
    let eps = run.eps;
    let cell = 4.0 * eps;
    let mut global_arcs = TrajectoryIndex::new(cell);
    let mut global_points = PointIndex::new(cell);
    let mut out = Vec::with_capacity(run.n_segments());
    for (n, leg) in lr.legs.iter().enumerate() {
        let mut arcs = TrajectoryIndex::new(cell);
        let mut points = PointIndex::new(cell);
        let mut kept_points = Vec::new();
        for j in leg.clone() {
            // arcs: flights of this leg before j; points: this leg's
            // scatterers Γ−1..j−2. The global indices hold everything earlier.
            let b = scatterer_point(run, j, mode);
            let near = |idx: &TrajectoryIndex| b.map(|b| idx.nearest_within(b, eps).is_some()).unwrap_or(false);
            let (mut intra_tilde, mut inter_tilde, mut direct, mut distant_tilde) = (false, false, false, false);
            for a in run.segment(j) {
                let local = points.near_arc(a, eps);
                intra_tilde |= !local.is_empty();
                direct |= j >= 2 && local.contains(&(j - 2));
                distant_tilde |= local.iter().any(|&k| k + 2 != j);
                inter_tilde |= !global_points.near_arc(a, eps).is_empty();
            }
            out.push(LegFlight {
                j,
                leg: n + 1,
                intra_hat: near(&arcs),
                intra_tilde,
                direct,
                distant_tilde,
                inter_hat: near(&global_arcs),
                inter_tilde,
            });
            for a in run.segment(j) {
                arcs.insert(*a);
            }
            if let Some(p) = scatterer_point(run, j - 1, mode) {
                points.insert(j - 1, p);
                kept_points.push((j - 1, p));
            }
        }
        for j in leg.clone() {
            for a in run.segment(j) {
                global_arcs.insert(*a);
            }
        }
        for (label, p) in kept_points {
            global_points.insert(label, p);
        }
    }
    Ok(out)
}

/// First flight with an intra-leg, an inter-leg and any mismatch.
pub fn leg_stopping_times(flags: &[LegFlight]) -> (Option<usize>, Option<usize>, Option<usize>) {
    let first = |f: &dyn Fn(&LegFlight) -> bool| flags.iter().find(|x| f(x)).map(|x| x.j);
    (
        first(&|x| x.intra()),
        first(&|x| x.inter()),
        first(&|x| x.intra() || x.inter()),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraLegRow {
    pub eps: f64,
    pub n_packs: usize,
    pub n_flights: usize,
    /// Fraction of flights of complete legs with an intra-leg mismatch.
    pub rate: f64,
    pub stderr: f64,
    pub shadow_rate: f64,
    pub direct_rate: f64,
    pub distant_rate: f64,
}

const PACKS_PER_RUN: usize = 50;

pub fn intra_leg_mismatch_rate(
    eps_grid: &[f64],
    n_packs: usize,
    legs_mode: LegsMode,
    mode: MismatchMode,
    seed: u64,
) -> Result<Vec<IntraLegRow>> {
    eps_grid
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let n_runs = n_packs.div_ceil(PACKS_PER_RUN);
            let per_run = (0..n_runs)
                .into_par_iter()
                .map(|r| {
                    let want = PACKS_PER_RUN.min(n_packs - r * PACKS_PER_RUN);
                    let s = RandomStream::new(mix_seed(seed, LEGS_TAG ^ e as u64), r as u64);
                    let lr = leg_run(eps, legs_mode, |_, done| done >= want, s)?;
                    let flags = leg_flags(&lr, mode)?;
                    // per-pack fractions, so the standard error is over i.i.d. packs
                    let mut packs = Vec::new();
                    for leg in &lr.legs[..lr.complete] {
                        let fl = &flags[leg.start - 1..leg.end - 1];
                        let c = |f: &dyn Fn(&LegFlight) -> bool| fl.iter().filter(|x| f(x)).count();
                        packs.push([
                            fl.len(),
                            c(&|x| x.intra()),
                            c(&|x| x.intra_hat),
                            c(&|x| x.intra_tilde && x.direct),
                            c(&|x| x.distant()),
                        ]);
                    }
                    Ok(packs)
                })
                .collect::<Result<Vec<_>>>()?;
            let packs: Vec<[usize; 5]> = per_run.into_iter().flatten().collect();
            let total: usize = packs.iter().map(|p| p[0]).sum();
            let sum = |i: usize| packs.iter().map(|p| p[i]).sum::<usize>() as f64 / total.max(1) as f64;
            let rate = sum(1);
            // ratio estimator over packs
            let resid: Vec<f64> = packs.iter().map(|p| p[1] as f64 - rate * p[0] as f64).collect();
            let mean_len = total as f64 / packs.len().max(1) as f64;
            let var = resid.iter().map(|r| r * r).sum::<f64>() / (packs.len().max(2) - 1) as f64;
            Ok(IntraLegRow {
                eps,
                n_packs: packs.len(),
                n_flights: total,
                rate,
                stderr: (var / packs.len().max(1) as f64).sqrt() / mean_len,
                shadow_rate: sum(2),
                direct_rate: sum(3),
                distant_rate: sum(4),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterLegRow {
    pub eps: f64,
    pub t_end: f64,
    pub n_runs: u64,
    /// Runs with an inter-leg mismatch before `t_end`.
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Runs with an inter-leg shadowing, respectively recollision.
    pub p_shadow: f64,
    pub p_recollide: f64,
    /// Runs with any mismatch before `t_end`.
    pub p_any: f64,
    /// Inter-leg events in a run's first leg; zero by construction.
    pub first_leg_events: u64,
    pub mean_legs: f64,
}

pub fn inter_leg_mismatch_rate(
    eps_grid: &[f64],
    t_end: f64,
    n_runs: u64,
    legs_mode: LegsMode,
    mode: MismatchMode,
    seed: u64,
) -> Result<Vec<InterLegRow>> {
    eps_grid
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let results = (0..n_runs)
                .into_par_iter()
                .map(|r| {
                    let s = RandomStream::new(mix_seed(seed, LEGS_TAG ^ 0x100 ^ e as u64), r);
                    let lr = leg_run(eps, legs_mode, |st, _| st.record.tau >= t_end, s)?;
                    let flags = leg_flags(&lr, mode)?;
                    let before = |j: usize| lr.run.records[j - 1].tau < t_end;
                    let seen = |f: &dyn Fn(&LegFlight) -> bool| flags.iter().any(|x| f(x) && before(x.j));
                    let first = flags.iter().filter(|f| f.leg == 1 && f.inter()).count() as u64;
                    Ok((
                        seen(&|x| x.inter()),
                        seen(&|x| x.inter() || x.intra()),
                        first,
                        lr.legs.len(),
                        seen(&|x| x.inter_hat),
                        seen(&|x| x.inter_tilde),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let hits = results.iter().filter(|r| r.0).count() as u64;
            let frac = |f: &dyn Fn(&(bool, bool, u64, usize, bool, bool)) -> bool| {
                results.iter().filter(|r| f(r)).count() as f64 / n_runs as f64
            };
            let (ci_lo, ci_hi) = wilson_interval(hits, n_runs, Z95);
            Ok(InterLegRow {
                eps,
                t_end,
                n_runs,
                p_hat: hits as f64 / n_runs as f64,
                ci_lo,
                ci_hi,
                p_shadow: frac(&|r| r.4),
                p_recollide: frac(&|r| r.5),
                p_any: frac(&|r| r.1),
                first_leg_events: results.iter().map(|r| r.2).sum(),
                mean_legs: results.iter().map(|r| r.3 as f64).sum::<f64>() / n_runs as f64,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCell {
    pub eps: f64,
    pub v: f64,
    pub xi: f64,
    pub n: u64,
    pub hits: u64,
}

impl LemmaCell {
    pub fn p_hat(&self) -> f64 {
        self.hits as f64 / self.n as f64
    }

    pub fn upper(&self) -> f64 {
        wilson_interval(self.hits, self.n, Z95).1
    }

    /// `εξ/|v|`, the shape of the bound.
    pub fn profile(&self) -> f64 {
        self.eps * self.xi / self.v
    }
}

const LEMMA_TAG: u64 = 0x6c65_6d6d;

/// Probability that one flight of duration `xi`, leaving the origin in a
/// uniform direction, comes within ε of the point at distance `v`.
pub fn lemma_cell(eps: f64, v: f64, xi: f64, n: u64, seed: u64) -> Result<LemmaCell> {
    let key = mix_seed(mix_seed(seed, LEMMA_TAG), mix_seed(v.to_bits(), xi.to_bits() ^ eps.to_bits()));
    let mut s = RandomStream::new(key, 0);
    let target = PlanarVector::new(v, 0.0);
    let mut hits = 0;
    for _ in 0..n {
        let phi0 = sample_uniform_angle(&mut s);
        let alpha = sample_alpha(&mut s);
        let origin = MarkovizedRecord::initial(phi0);
        let arcs = interpolate_segment(&origin, PrimitiveDraw { xi, alpha }, eps)?;
        if arcs.iter().any(|a| min_distance_point_to_arc(target, a) < eps) {
            hits += 1;
        }
    }
    Ok(LemmaCell { eps, v, xi, n, hits })
}

pub fn geometric_lemma_check(eps: f64, v_grid: &[f64], xi_grid: &[f64], n: u64, seed: u64) -> Result<Vec<LemmaCell>> {
    let cells: Vec<(f64, f64)> = v_grid.iter().flat_map(|&v| xi_grid.iter().map(move |&x| (v, x))).collect();
    cells.par_iter().map(|&(v, xi)| lemma_cell(eps, v, xi, n, seed)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaFit {
    pub constant: f64,
    /// Held-out cells whose estimate exceeds the fitted bound by more than
    /// their own sampling error.
    pub violations: Vec<(f64, f64)>,
    pub cells_checked: usize,
}

/// Fits `C` with `Wilson-upper(train) ≤ C εξ/|v|` and checks
/// `p̂(test) ≤ C εξ/|v|` on cells not further than 2 from the origin.
pub fn fit_lemma_bound(train: &[LemmaCell], test: &[LemmaCell]) -> LemmaFit {
    let constant = train
        .iter()
        .filter(|c| c.v <= 2.0)
        .map(|c| c.upper() / c.profile())
        .fold(0.0, f64::max);
    let checked: Vec<&LemmaCell> = test.iter().filter(|c| c.v <= 2.0).collect();
    let violations = checked
        .iter()
        .filter(|c| c.p_hat() > constant * c.profile())
        .map(|c| (c.v, c.xi))
        .collect();
    LemmaFit {
        constant,
        violations,
        cells_checked: checked.len(),
    }
}
