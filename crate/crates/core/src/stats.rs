//! Goodness-of-fit tests, regression helpers, and the diffusive-scaling and
//! trapping experiments built on them.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::coupling::{coupled_run, MismatchMode};
use crate::environment::ScattererField;
use crate::error::{Error, Result};
use crate::geometry::PlanarVector;
use crate::limit_process::{simulate_until, LimitTrajectory};
use crate::markovized::{simulate_markovized, MarkovizedRun};
use crate::physical_mlp::{orbit_is_free, simulate_physical, MlpState, ScenarioLabel, TrapCutoffs};
use crate::randomness::{mix_seed, sample_uniform_angle, RandomStream, UniformSource};

/// Significance level shared by every suite; individual tests are held to
/// `SIGNIFICANCE / m` for `m` tests.
pub const SIGNIFICANCE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
}

impl TestOutcome {
    fn new(name: impl Into<String>, statistic: f64, p_value: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
        }
    }

    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

pub fn bonferroni(level: f64, m: usize) -> f64 {
    level / m.max(1) as f64
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Wilson score interval at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    }
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        let a = -std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * a).map(f64::exp).sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
    } else {
        let s: f64 = (1..=100)
            .map(|k: i32| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * x * x).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let r = n_eff.sqrt();
    kolmogorov_sf((r + 0.12 + 0.11 / r) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> TestOutcome {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    TestOutcome::new("ks", d, ks_p(d, n))
}

/// Largest gap between two empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < xs.len() && j < ys.len() {
        let t = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= t {
            i += 1;
        }
        while j < ys.len() && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestOutcome {
    let d = ks_distance(a, b);
    let (n, m) = (a.len() as f64, b.len() as f64);
    TestOutcome::new("ks2", d, ks_p(d, n * m / (n + m)))
}

/// Anderson–Darling test of normality with mean and variance estimated,
/// using the small-sample modified statistic and its p-value approximation.
pub fn anderson_darling_normal(samples: &[f64]) -> TestOutcome {
    let n = samples.len();
    let nf = n as f64;
    let m = mean(samples);
    let sd = variance(samples).sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let phi = Normal::standard();
    let mut s = 0.0;
    for i in 0..n {
        let lo = phi.cdf(z[i]).max(1e-300);
        let hi = phi.sf(z[n - 1 - i]).max(1e-300);
        s += (2 * i + 1) as f64 * (lo.ln() + hi.ln());
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    TestOutcome::new("anderson-darling", a, p)
}

/// Pearson chi-square of counts against cell probabilities (which must sum
/// to one); `fitted` parameters are removed from the degrees of freedom.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], fitted: usize) -> TestOutcome {
    let total: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1 - fitted) as f64;
    let p = ChiSquared::new(dof).map(|d| d.sf(stat)).unwrap_or(0.0);
    TestOutcome::new("chi-square", stat, p)
}

pub fn lag1_correlation(xs: &[f64]) -> f64 {
    correlation(&xs[..xs.len() - 1], &xs[1..])
}

/// Permutation test of serial independence: two-sided p-value of the lag-1
/// correlation against `n_perm` shuffles.
pub fn permutation_lag1(xs: &[f64], n_perm: usize, s: &mut RandomStream) -> TestOutcome {
    let observed = lag1_correlation(xs);
    let mut work = xs.to_vec();
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        work.shuffle(s);
        if lag1_correlation(&work).abs() >= observed.abs() {
            extreme += 1;
        }
    }
    TestOutcome::new("permutation-lag1", observed, (extreme + 1) as f64 / (n_perm + 1) as f64)
}

/// Two-sided test of zero correlation from the Fisher transform.
pub fn correlation_test(xs: &[f64], ys: &[f64]) -> TestOutcome {
    let r = correlation(xs, ys);
    let z = r.atanh() * (xs.len() as f64 - 3.0).sqrt();
    TestOutcome::new("correlation", r, 2.0 * Normal::standard().sf(z.abs()))
}

/// A trajectory that can be evaluated at any time up to its end.
pub trait Path {
    fn end_time(&self) -> f64;
    fn position(&self, t: f64) -> Result<PlanarVector>;
}

impl Path for LimitTrajectory {
    fn end_time(&self) -> f64 {
        LimitTrajectory::end_time(self)
    }

    fn position(&self, t: f64) -> Result<PlanarVector> {
        self.position_at(t)
    }
}

impl Path for MarkovizedRun {
    fn end_time(&self) -> f64 {
        MarkovizedRun::end_time(self)
    }

    fn position(&self, t: f64) -> Result<PlanarVector> {
        self.position_at(t)
    }
}

/// `Y(T)/√T` for every path.
pub fn rescale_endpoints<P: Path>(paths: &[P], t: f64) -> Result<Vec<PlanarVector>> {
    paths
        .iter()
        .map(|p| {
            if p.end_time() < t {
                return Err(Error::ShortPath {
                    end: p.end_time(),
                    requested: t,
                });
            }
            Ok(p.position(t)? * (1.0 / t.sqrt()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessKind {
    Limit,
    Markovized,
    /// Markovized runs coupled to the physical process; statistics are
    /// conditioned on no mismatch before the horizon.
    Coupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Fixed(f64),
    /// `T(ε) = coef · ε^exponent`
    Power { coef: f64, exponent: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Power {
            coef: 1.0,
            exponent: -0.5,
        }
    }
}

impl Schedule {
    pub fn horizon(&self, eps: Option<f64>) -> Result<f64> {
        match (*self, eps) {
            (Schedule::Fixed(t), _) => Ok(t),
            (Schedule::Power { coef, exponent }, Some(e)) => Ok(coef * e.powf(exponent)),
            (Schedule::Power { .. }, None) => Err(Error::InvalidParameter("power schedule needs ε".into())),
        }
    }
}

/// Largest `T(ε)·ε|log ε|` accepted for coupled experiments.
pub const SCHEDULE_LIMIT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExperiment {
    pub process: ProcessKind,
    pub eps: Option<f64>,
    pub schedule: Schedule,
    pub n_paths: usize,
    pub seed: u64,
    pub mismatch_mode: MismatchMode,
}

impl ScalingExperiment {
    pub fn horizon(&self) -> Result<f64> {
        let t = self.schedule.horizon(self.eps)?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositiveCutoff(t));
        }
        if self.process == ProcessKind::Coupled {
            let eps = self
                .eps
                .ok_or_else(|| Error::InvalidParameter("coupled experiment needs ε".into()))?;
            let value = t * eps * eps.ln().abs();
            if value >= SCHEDULE_LIMIT {
                return Err(Error::InadmissibleSchedule {
                    eps,
                    value,
                    limit: SCHEDULE_LIMIT,
                });
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub t: f64,
    /// `σ² = E|Y(t)|² / (2t)`
    pub sigma2: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub process: ProcessKind,
    pub eps: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub n_paths: usize,
    /// Paths excluded because their coupling broke before the horizon.
    pub n_mismatched: usize,
    pub normality: Vec<TestOutcome>,
    pub increments: Vec<TestOutcome>,
    pub level: f64,
    pub all_pass: bool,
    pub msd_times: Vec<f64>,
    pub msd: Vec<f64>,
    pub msd_fit: LinearFit,
    pub sigma: Vec<SigmaEstimate>,
    /// Off-diagonal endpoint covariance over the mean component variance.
    pub anisotropy: f64,
}

const SUITE_TAG: u64 = 0x696e_7661;
const MSD_POINTS: usize = 10;

fn sample_path(exp: &ScalingExperiment, t: f64, index: u64, times: &[f64]) -> Result<Option<Vec<PlanarVector>>> {
    let mut s = RandomStream::new(mix_seed(exp.seed, SUITE_TAG), index);
    let at = |p: &dyn Fn(f64) -> Result<PlanarVector>| times.iter().map(|&u| p(u)).collect::<Result<Vec<_>>>();
    match exp.process {
        ProcessKind::Limit => {
            let path = simulate_until(t, &mut s);
            at(&|u| path.position_at(u)).map(Some)
        }
        ProcessKind::Markovized => {
            let eps = exp.eps.ok_or_else(|| Error::InvalidParameter("markovized experiment needs ε".into()))?;
            let run = simulate_markovized(t, eps, &mut s)?;
            at(&|u| run.position_at(u)).map(Some)
        }
        ProcessKind::Coupled => {
            let eps = exp.eps.ok_or_else(|| Error::InvalidParameter("coupled experiment needs ε".into()))?;
            let c = coupled_run(eps, t, &mut s, exp.mismatch_mode)?;
            // X is only known to equal Y before τ_{ρ−1}
            if c.rho_stop.is_some() && c.stop_time <= t {
                return Ok(None);
            }
            at(&|u| c.x_position_at(u)).map(Some)
        }
    }
}

/// Bootstrap interval for the mean of `xs` (percentile method).
pub fn bootstrap_mean_ci(xs: &[f64], resamples: usize, level: f64, s: &mut RandomStream) -> (f64, f64) {
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[(s.next_uniform() * n as f64) as usize]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = ((1.0 - level) / 2.0 * resamples as f64) as usize;
    let hi = (((1.0 + level) / 2.0 * resamples as f64) as usize).min(resamples - 1);
    (means[lo], means[hi])
}

/// Finite-dimensional checks of the diffusive limit: normality of each
/// component at `T/8, T/4, T/2, T`, independence of the increments over
/// `[0, T/2]` and `[T/2, T]`, linear growth of the mean square displacement,
/// and the diffusivity `σ²` at each dyadic time.
pub fn invariance_suite(exp: &ScalingExperiment) -> Result<InvarianceReport> {
    let t = exp.horizon()?;
    let times: Vec<f64> = [0.125, 0.25, 0.5, 1.0].iter().map(|f| f * t).collect();
    let msd_times: Vec<f64> = (1..=MSD_POINTS).map(|k| t * k as f64 / MSD_POINTS as f64).collect();
    let mut grid: Vec<f64> = times.iter().chain(&msd_times).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let samples = (0..exp.n_paths as u64)
        .into_par_iter()
        .map(|i| sample_path(exp, t, i, &grid))
        .collect::<Result<Vec<_>>>()?;
    let n_mismatched = samples.iter().filter(|s| s.is_none()).count();
    let paths: Vec<Vec<PlanarVector>> = samples.into_iter().flatten().collect();
    if paths.len() < 8 {
        return Err(Error::InvalidParameter(format!("only {} usable paths", paths.len())));
    }
    let col = |u: f64| -> Vec<PlanarVector> {
        let k = grid.iter().position(|&g| g == u).unwrap();
        paths.iter().map(|p| p[k]).collect()
    };

    let mut normality = Vec::new();
    for &u in &times {
        let pts = col(u);
        for (name, comp) in [("x", 0), ("y", 1)] {
            let xs: Vec<f64> = pts.iter().map(|p| if comp == 0 { p.x } else { p.y }).collect();
            let mut o = anderson_darling_normal(&xs);
            o.name = format!("anderson-darling {name} at t={u}");
            normality.push(o);
        }
    }
    let (half, end) = (col(0.5 * t), col(t));
    let mut increments = Vec::new();
    for (name, comp) in [("x", 0), ("y", 1)] {
        let pick = |p: &PlanarVector| if comp == 0 { p.x } else { p.y };
        let first: Vec<f64> = half.iter().map(pick).collect();
        let second: Vec<f64> = half.iter().zip(&end).map(|(a, b)| pick(b) - pick(a)).collect();
        let mut o = correlation_test(&first, &second);
        o.name = format!("increment correlation {name}");
        increments.push(o);
    }
    let level = bonferroni(SIGNIFICANCE, normality.len() + increments.len());
    let all_pass = normality.iter().chain(&increments).all(|o| o.passes(level));

    let msd: Vec<f64> = msd_times
        .iter()
        .map(|&u| mean(&col(u).iter().map(|p| p.norm_sq()).collect::<Vec<_>>()))
        .collect();
    let msd_fit = linear_fit(&msd_times, &msd);

    let mut boot = RandomStream::new(mix_seed(exp.seed, SUITE_TAG ^ 0xb007), 0);
    let sigma = times
        .iter()
        .map(|&u| {
            let sq: Vec<f64> = col(u).iter().map(|p| p.norm_sq() / (2.0 * u)).collect();
            let (ci_lo, ci_hi) = bootstrap_mean_ci(&sq, 1000, 0.95, &mut boot);
            SigmaEstimate {
                t: u,
                sigma2: mean(&sq),
                ci_lo,
                ci_hi,
            }
        })
        .collect();

    let xs: Vec<f64> = end.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = end.iter().map(|p| p.y).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() as f64 - 1.0);
    let anisotropy = cov.abs() / (0.5 * (variance(&xs) + variance(&ys)));

    Ok(InvarianceReport {
        process: exp.process,
        eps: exp.eps,
        horizon: t,
        seed: exp.seed,
        times,
        n_paths: paths.len(),
        n_mismatched,
        normality,
        increments,
        level,
        all_pass,
        msd_times,
        msd,
        msd_fit,
        sigma,
        anisotropy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapEstimate {
    pub eps: f64,
    pub rho: f64,
    pub n_runs: u64,
    pub trapped: u64,
    pub p_hat: f64,
    pub stderr: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `e^{−4πϱε}`
    pub formula: f64,
    /// Same probability given that the start point is uncovered,
    /// `e^{−ϱ(4πε − πε²)}`.
    pub conditional: f64,
    /// Value of the formula on the Boltzmann–Grad line `ϱε = 2`.
    pub bg_atom: f64,
}

const TRAP_TAG: u64 = 0x7472_6170;

/// Whether run `index` is trapped on a free Larmor circle from the start.
pub fn trapped_at_start(eps: f64, rho: f64, seed: u64, index: u64) -> Result<bool> {
    let mut field = ScattererField::new(rho, eps, mix_seed(seed, TRAP_TAG), index)?;
    field.condition_start_free(PlanarVector::ZERO);
    let mut s = RandomStream::new(mix_seed(seed, TRAP_TAG), index);
    let state = MlpState::new(PlanarVector::ZERO, PlanarVector::unit(sample_uniform_angle(&mut s)));
    Ok(orbit_is_free(&state, &mut field))
}

/// Empirical probability that the particle circles forever without a
/// collision, with a 95% Wilson interval.
pub fn trap_probability(eps: f64, rho: f64, n_runs: u64, seed: u64) -> Result<TrapEstimate> {
    if rho * eps > 2.0 {
        return Err(Error::InvalidParameter(format!("ϱε = {} exceeds 2", rho * eps)));
    }
    let trapped = (0..n_runs)
        .into_par_iter()
        .map(|i| trapped_at_start(eps, rho, seed, i).map(u64::from))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let p_hat = trapped as f64 / n_runs as f64;
    let (ci_lo, ci_hi) = wilson_interval(trapped, n_runs, Z95);
    let pi = std::f64::consts::PI;
    Ok(TrapEstimate {
        eps,
        rho,
        n_runs,
        trapped,
        p_hat,
        stderr: (p_hat * (1.0 - p_hat) / n_runs as f64).sqrt(),
        ci_lo,
        ci_hi,
        formula: (-4.0 * pi * rho * eps).exp(),
        conditional: (-rho * (4.0 * pi * eps - pi * eps * eps)).exp(),
        bg_atom: (-8.0 * pi).exp(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCensus {
    pub eps: f64,
    pub rho: f64,
    pub n_runs: u64,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    pub unresolved: u64,
}

/// Labels `n_runs` physical runs up to `t_end`.
pub fn scenario_census(eps: f64, rho: f64, n_runs: u64, seed: u64, t_end: f64, cutoffs: TrapCutoffs) -> Result<ScenarioCensus> {
    let labels = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut field = ScattererField::new(rho, eps, mix_seed(seed, TRAP_TAG), i)?;
            field.condition_start_free(PlanarVector::ZERO);
            let mut s = RandomStream::new(mix_seed(seed, TRAP_TAG), i);
            simulate_physical(&mut field, t_end, &mut s, cutoffs).map(|r| r.label)
        })
        .collect::<Result<Vec<_>>>()?;
    let count = |l: ScenarioLabel| labels.iter().filter(|&&x| x == l).count() as u64;
    Ok(ScenarioCensus {
        eps,
        rho,
        n_runs,
        a: count(ScenarioLabel::A),
        b: count(ScenarioLabel::B),
        c: count(ScenarioLabel::C),
        d: count(ScenarioLabel::D),
        unresolved: count(ScenarioLabel::Unresolved),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::{sample_exp, split_stream};
    use proptest::prelude::*;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut s = split_stream(seed, 0);
        (0..n)
            .map(|_| {
                let (u, v) = (s.next_open_uniform(), s.next_uniform());
                (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect()
    }

    #[test]
    fn kolmogorov_critical_values() {
        // Tabulated asymptotic critical values.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-3);
        assert!((kolmogorov_sf(1.2238) - 0.10).abs() < 1e-3);
        // Both series agree where they meet.
        let a = std::f64::consts::PI.powi(2) / (8.0 * 1.18f64.powi(2));
        let small = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / 1.18 * (1..=20).map(|k| (-(((2 * k - 1) as f64).powi(2)) * a).exp()).sum::<f64>();
        assert!((small - kolmogorov_sf(1.18)).abs() < 1e-10);
    }

    #[test]
    fn anderson_darling_critical_values() {
        // Modified statistic 0.752 and 1.035 are the 5% and 1% points.
        let p = |a: f64| (1.2937 - 5.709 * a + 0.0186 * a * a).exp();
        assert!((p(0.752) - 0.05).abs() < 3e-3);
        assert!((p(1.035) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn normality_accepts_normals_rejects_exponentials() {
        assert!(anderson_darling_normal(&normals(5_000, 1)).passes(0.01));
        let mut s = split_stream(2, 0);
        let e: Vec<f64> = (0..5_000).map(|_| sample_exp(&mut s)).collect();
        assert!(anderson_darling_normal(&e).p_value < 1e-6);
    }

    #[test]
    fn ks_null_p_values_are_uniform() {
        let ps: Vec<f64> = (0..400)
            .map(|k| {
                let mut s = split_stream(3, k);
                let xs: Vec<f64> = (0..200).map(|_| s.next_uniform()).collect();
                ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).p_value
            })
            .collect();
        assert!(ks_one_sample(&ps, |x| x.clamp(0.0, 1.0)).p_value > 1e-3);
    }

    #[test]
    fn two_sample_ks_detects_shift() {
        let a = normals(2_000, 4);
        let b: Vec<f64> = normals(2_000, 5);
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        assert!(ks_two_sample(&a, &b).p_value > 1e-3);
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
    }

    #[test]
    fn ks_distance_by_brute_force() {
        let a = normals(300, 6);
        let b = normals(200, 7);
        let brute = a
            .iter()
            .chain(&b)
            .map(|&t| {
                let fa = a.iter().filter(|&&x| x <= t).count() as f64 / a.len() as f64;
                let fb = b.iter().filter(|&&x| x <= t).count() as f64 / b.len() as f64;
                (fa - fb).abs()
            })
            .fold(0.0, f64::max);
        assert!((ks_distance(&a, &b) - brute).abs() < 1e-12);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let mut s = split_stream(8, 0);
        let mut counts = vec![0u64; 10];
        for _ in 0..100_000 {
            counts[(s.next_uniform() * 10.0) as usize] += 1;
        }
        assert!(chi_square_gof(&counts, &[0.1; 10], 0).p_value > 1e-3);
        let skewed = [12_000, 8_000, 10_000, 10_000, 10_000, 10_000, 10_000, 10_000, 10_000, 10_000];
        assert!(chi_square_gof(&skewed, &[0.1; 10], 0).p_value < 1e-10);
    }

    #[test]
    fn permutation_detects_serial_dependence() {
        let mut s = split_stream(9, 0);
        let iid: Vec<f64> = (0..500).map(|_| s.next_uniform()).collect();
        let mut ar = vec![0.0];
        for _ in 1..500 {
            let last = *ar.last().unwrap();
            ar.push(0.6 * last + s.next_uniform());
        }
        assert!(permutation_lag1(&iid, 999, &mut s).p_value > 1e-3);
        assert!(permutation_lag1(&ar, 999, &mut s).p_value <= 1e-3);
    }

    #[test]
    fn fit_recovers_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn wilson_brackets_estimate(n in 1u64..5_000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).round() as u64;
            let (lo, hi) = wilson_interval(k, n, Z95);
            let p = k as f64 / n as f64;
            prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }

        #[test]
        fn bonferroni_divides(level in 1e-4f64..0.5, m in 1usize..100) {
            prop_assert!((bonferroni(level, m) * m as f64 - level).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_path_rescales_to_zero() {
        struct Still;
        impl Path for Still {
            fn end_time(&self) -> f64 {
                5.0
            }
            fn position(&self, _: f64) -> Result<PlanarVector> {
                Ok(PlanarVector::ZERO)
            }
        }
        assert_eq!(rescale_endpoints(&[Still], 4.0).unwrap(), vec![PlanarVector::ZERO]);
        assert!(matches!(rescale_endpoints(&[Still], 6.0), Err(Error::ShortPath { .. })));
    }

    #[test]
    fn schedule_admissibility() {
        let mut exp = ScalingExperiment {
            process: ProcessKind::Coupled,
            eps: Some(0.01),
            schedule: Schedule::default(),
            n_paths: 10,
            seed: 1,
            mismatch_mode: MismatchMode::CollisionPoints,
        };
        assert!((exp.horizon().unwrap() - 10.0).abs() < 1e-9);
        exp.schedule = Schedule::Fixed(20.0);
        assert!(matches!(exp.horizon(), Err(Error::InadmissibleSchedule { .. })));
        exp.process = ProcessKind::Markovized;
        assert!(exp.horizon().is_ok());
    }

    #[test]
    fn limit_suite_small() {
        let exp = ScalingExperiment {
            process: ProcessKind::Limit,
            eps: None,
            schedule: Schedule::Fixed(200.0),
            n_paths: 2_000,
            seed: 11,
            mismatch_mode: MismatchMode::CollisionPoints,
        };
        let r = invariance_suite(&exp).unwrap();
        assert!(r.all_pass, "{:?}", r.normality);
        assert!(r.msd_fit.r2 > 0.99);
        assert!(r.anisotropy < 0.1);
        let s = &r.sigma;
        assert!(s[3].ci_lo < s[3].sigma2 && s[3].sigma2 < s[3].ci_hi);
    }

    #[test]
    fn endpoint_variance_stabilizes() {
        let paths: Vec<LimitTrajectory> = (0..10_000).into_par_iter().map(|k| simulate_until(1_000.0, &mut split_stream(12, k))).collect();
        let var = |t: f64| {
            let e = rescale_endpoints(&paths, t).unwrap();
            0.5 * (variance(&e.iter().map(|p| p.x).collect::<Vec<_>>()) + variance(&e.iter().map(|p| p.y).collect::<Vec<_>>()))
        };
        assert!((var(500.0) / var(1_000.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn no_scatterers_always_trapped() {
        let t = trap_probability(0.01, 0.0, 1_000, 13).unwrap();
        assert_eq!(t.p_hat, 1.0);
    }

    #[test]
    fn trap_formula_at_moderate_density() {
        let t = trap_probability(0.01, 10.0, 100_000, 14).unwrap();
        assert!((t.p_hat - t.formula).abs() < 3.0 * t.stderr, "{t:?}");
    }

    #[test]
    fn census_counts_add_up() {
        let cutoffs = TrapCutoffs {
            t_max: 50.0,
            ..TrapCutoffs::default()
        };
        let c = scenario_census(0.05, 4.0, 200, 15, 200.0, cutoffs).unwrap();
        assert_eq!(c.a + c.b + c.c + c.d + c.unresolved, 200);
        assert!(c.b > 0);
    }
}
