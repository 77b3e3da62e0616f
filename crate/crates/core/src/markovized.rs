//! The Markovized process at positive scatterer radius: after every fresh
//! collision the particle sees only the scatterer it just hit, recollides
//! with it `ν` times and then flies a final arc `ζ` to the next fresh one.

use std::f64::consts::{PI, TAU};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    beta_unchecked, decompose_flight, first_arc_disk_hit, gamma_unchecked, reflect_unchecked,
    sign_eps, wrap_angle, ArcSegment, Disk, PlanarVector,
};
use crate::limit_process::arc_chord;
use crate::minorization::{minorization_report, regeneration_cutoff, MinorizationReport};
use crate::randomness::{sample_uniform_angle, truncexp_cdf, PrimitiveDraw, UniformSource};

/// Tolerance between the mechanical and the algebraic end point of a flight.
pub const MECHANICAL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiState {
    pub eps_sign: i8,
    pub r_tilde: f64,
    pub theta_tilde: f64,
    pub r_hat: f64,
    pub theta_hat: f64,
}

impl PsiState {
    /// Encodes the initial direction as an empty final arc along `phi0`.
    pub fn initial(phi0: f64) -> Self {
        Self {
            eps_sign: 1,
            r_tilde: 0.0,
            theta_tilde: wrap_angle(phi0),
            r_hat: 0.0,
            theta_hat: 0.0,
        }
    }

    /// Half of the final arc, recovered from its chord length and half-turn sign.
    pub fn half_zeta(&self) -> f64 {
        let a = (0.5 * self.r_tilde).clamp(0.0, 1.0).asin();
        if self.eps_sign > 0 {
            a
        } else {
            PI - a
        }
    }

    /// Velocity direction just before the next fresh collision.
    pub fn phi(&self) -> f64 {
        self.theta_tilde + self.half_zeta()
    }
}

/// One fresh-collision step. `position` and `tau` are absolute when produced
/// by a simulation and relative to the previous collision when produced by
/// [`step_psi`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovizedRecord {
    pub psi: PsiState,
    pub draw: PrimitiveDraw,
    pub nu: u64,
    pub zeta: f64,
    pub beta: f64,
    /// Unreduced velocity angle just before the next fresh collision.
    pub phi: f64,
    pub y_hat: PlanarVector,
    pub y_tilde: PlanarVector,
    pub position: PlanarVector,
    pub tau: f64,
}

impl MarkovizedRecord {
    pub fn initial(phi0: f64) -> Self {
        Self {
            psi: PsiState::initial(phi0),
            draw: PrimitiveDraw { xi: 0.0, alpha: 0.0 },
            nu: 0,
            zeta: 0.0,
            beta: 0.0,
            phi: phi0,
            y_hat: PlanarVector::ZERO,
            y_tilde: PlanarVector::ZERO,
            position: PlanarVector::ZERO,
            tau: 0.0,
        }
    }

    /// `ε ŷ + ỹ`
    pub fn displacement(&self, eps: f64) -> PlanarVector {
        self.y_hat * eps + self.y_tilde
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::EpsOutOfRange {
            eps,
            range: "(0, 0.5)",
        })
    }
}

/// Advances from velocity angle `phi` by one flight.
///
/// The contact point moves around the scatterer by `γ` at every recollision,
/// so after `ν` of them it sits at `−2 sin(νγ/2) e^{i(φ + α/2 + νγ/2)}` (in
/// units of ε) from the fresh contact point.
pub(crate) fn advance(phi: f64, draw: PrimitiveDraw, eps: f64, prev: &MarkovizedRecord) -> MarkovizedRecord {
    let alpha = draw.alpha;
    let beta = beta_unchecked(alpha, eps);
    let gamma = gamma_unchecked(alpha, eps);
    let (nu, zeta) = decompose_flight(draw.xi, beta);
    let nuf = nu as f64;
    let turned = phi + (nuf + 1.0) * alpha - nuf * beta;
    let y_tilde = arc_chord(turned, zeta);
    let (r_hat, theta_hat, y_hat) = if nu == 0 {
        (0.0, 0.0, PlanarVector::ZERO)
    } else {
        let half = 0.5 * wrap_angle(nuf * gamma);
        let r = 2.0 * half.sin();
        let dir = phi + 0.5 * alpha + half + PI;
        (r, wrap_angle(dir), PlanarVector::from_polar(r, dir))
    };
    let psi = PsiState {
        eps_sign: sign_eps(zeta),
        r_tilde: 2.0 * (0.5 * zeta).sin(),
        theta_tilde: wrap_angle(turned + 0.5 * zeta),
        r_hat,
        theta_hat,
    };
    MarkovizedRecord {
        psi,
        draw,
        nu,
        zeta,
        beta,
        phi: turned + zeta,
        y_hat,
        y_tilde,
        position: prev.position + y_hat * eps + y_tilde,
        tau: prev.tau + draw.xi,
    }
}

pub fn step_psi(state: PsiState, draw: PrimitiveDraw, eps: f64) -> Result<(PsiState, MarkovizedRecord)> {
    check_eps(eps)?;
    let mut origin = MarkovizedRecord::initial(state.phi());
    origin.psi = state;
    let rec = advance(state.phi(), draw, eps, &origin);
    Ok((rec.psi, rec))
}

/// Single-scatterer mechanics for the flight following `prev`.
///
/// The scatterer is placed so that the fresh collision at `prev.position`
/// turns the velocity by `α`; the particle then runs the event-driven
/// dynamics against that one disk for `ν` recollisions and a final arc `ζ`.
pub fn interpolate_segment(
    prev: &MarkovizedRecord,
    draw: PrimitiveDraw,
    eps: f64,
) -> Result<Vec<ArcSegment>> {
    check_eps(eps)?;
    let expected = advance(prev.phi, draw, eps, prev);
    let u = PlanarVector::unit(prev.phi);
    let normal = u.cmul(PlanarVector::unit(0.5 * draw.alpha)).perp();
    // mechanics in a frame centred on the fresh collision, so that rounding
    // does not grow with the distance travelled
    let origin = prev.position;
    let disk = Disk {
        center: normal * -eps,
        radius: eps,
    };
    let mut pos = PlanarVector::ZERO;
    let mut vel = u.rotate(draw.alpha);
    let mut t = prev.tau;
    let mut arcs = Vec::with_capacity(expected.nu as usize + 1);
    for _ in 0..expected.nu {
        let (sweep, hit) = first_arc_disk_hit(pos, vel, &disk, TAU)?
            .ok_or(Error::Inconsistent(f64::INFINITY))?;
        let arc = ArcSegment::from_state(pos, vel, sweep, t);
        let n = (hit - disk.center).normalized();
        vel = reflect_unchecked(arc.end_velocity(), n);
        pos = hit;
        t += sweep;
        arcs.push(arc);
    }
    let last = ArcSegment::from_state(pos, vel, expected.zeta, t);
    if let Some((sweep, _)) = first_arc_disk_hit(pos, vel, &disk, expected.zeta)? {
        if sweep < expected.zeta - MECHANICAL_TOL {
            return Err(Error::Inconsistent(expected.zeta - sweep));
        }
    }
    arcs.push(last);
    for a in &mut arcs {
        a.center = a.center + origin;
    }
    let last = arcs[arcs.len() - 1];
    let err = last
        .end_point()
        .distance(expected.position)
        .max((last.t1() - expected.tau).abs())
        .max(last.end_velocity().distance(PlanarVector::unit(expected.phi)));
    // rounding in absolute coordinates grows with distance and elapsed time
    let tol = MECHANICAL_TOL.max(64.0 * f64::EPSILON * (expected.position.norm() + expected.tau));
    if err > tol {
        return Err(Error::Inconsistent(err));
    }
    Ok(arcs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovizedRun {
    pub eps: f64,
    /// Entry 0 is the initial record at the origin.
    pub records: Vec<MarkovizedRecord>,
    /// Empty when the run was generated without interpolation.
    pub arcs: Vec<ArcSegment>,
    /// `arcs[segment_arcs[j]]` are the arcs of flight `j` (from record `j-1`
    /// to record `j`); entry 0 is empty.
    pub segment_arcs: Vec<Range<usize>>,
}

impl MarkovizedRun {
    pub fn end_time(&self) -> f64 {
        self.records.last().unwrap().tau
    }

    pub fn n_segments(&self) -> usize {
        self.records.len() - 1
    }

    pub fn segment(&self, j: usize) -> &[ArcSegment] {
        &self.arcs[self.segment_arcs[j].clone()]
    }

    /// Position at time `t`; needs the interpolated arcs.
    pub fn position_at(&self, t: f64) -> Result<PlanarVector> {
        let end = self.end_time();
        if !(0.0..=end).contains(&t) || self.arcs.is_empty() {
            return Err(Error::TimeOutOfRange { t, end });
        }
        let i = self.arcs.partition_point(|a| a.t1() < t).min(self.arcs.len() - 1);
        Ok(self.arcs[i].point_at(t))
    }
}

fn run_records<S: UniformSource + ?Sized>(
    t_end: f64,
    eps: f64,
    s: &mut S,
    mut on_step: impl FnMut(&MarkovizedRecord, PrimitiveDraw) -> Result<()>,
) -> Result<Vec<MarkovizedRecord>> {
    check_eps(eps)?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {t_end}")));
    }
    let phi0 = sample_uniform_angle(s);
    let mut records = vec![MarkovizedRecord::initial(phi0)];
    while records.last().unwrap().tau < t_end {
        let prev = records.last().unwrap();
        let draw = PrimitiveDraw::sample(s);
        on_step(prev, draw)?;
        let next = advance(prev.phi, draw, eps, prev);
        records.push(next);
    }
    Ok(records)
}

/// Markovized run up to the first fresh collision at or after `t_end`, with
/// every flight interpolated mechanically.
pub fn simulate_markovized<S: UniformSource + ?Sized>(
    t_end: f64,
    eps: f64,
    s: &mut S,
) -> Result<MarkovizedRun> {
    let mut arcs = Vec::new();
    let mut segment_arcs = vec![0..0];
    let records = run_records(t_end, eps, s, |prev, draw| {
        let start = arcs.len();
        arcs.extend(interpolate_segment(prev, draw, eps)?);
        segment_arcs.push(start..arcs.len());
        Ok(())
    })?;
    Ok(MarkovizedRun {
        eps,
        records,
        arcs,
        segment_arcs,
    })
}

/// Same draws and records as [`simulate_markovized`], without arcs.
pub fn simulate_markovized_records<S: UniformSource + ?Sized>(
    t_end: f64,
    eps: f64,
    s: &mut S,
) -> Result<MarkovizedRun> {
    let records = run_records(t_end, eps, s, |_, _| Ok(()))?;
    let segment_arcs = vec![0..0; records.len()];
    Ok(MarkovizedRun {
        eps,
        records,
        arcs: Vec::new(),
        segment_arcs,
    })
}

/// Position at time `t` of the flight following `prev`, by replaying its
/// mechanics.
pub fn position_in_flight(prev: &MarkovizedRecord, next: &MarkovizedRecord, eps: f64, t: f64) -> Result<PlanarVector> {
    let arcs = interpolate_segment(prev, next.draw, eps)?;
    let a = arcs
        .iter()
        .find(|a| t <= a.t1())
        .unwrap_or_else(|| arcs.last().unwrap());
    Ok(a.point_at(t))
}

/// Döblin constant of the ψ-chain: one-step minorization of the
/// (sign, r̃, θ̃) components against TruncExp(1, L) × Uniform.
pub fn doeblin_delta_eps(eps: f64) -> Result<f64> {
    Ok(doeblin_report_eps(eps)?.delta)
}

pub fn doeblin_report_eps(eps: f64) -> Result<MinorizationReport> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(Error::EpsOutOfRange {
            eps,
            range: "(0, 0.1]",
        });
    }
    Ok(minorization_report(eps))
}

/// Monte Carlo check of a minorization constant: from the fixed state
/// `start`, the empirical probability of each cell of a `bins × bins` grid
/// in (ζ, θ̃) is divided by the cell's mass under TruncExp(1, L) × Uniform.
/// The ζ bins are quantile bins of that law, so every cell has the same
/// target mass. Returns the smallest ratio.
pub fn empirical_kernel_ratio<S: UniformSource + ?Sized>(
    start: PsiState,
    eps: f64,
    bins: usize,
    samples: usize,
    s: &mut S,
) -> Result<f64> {
    check_eps(eps)?;
    let cutoff = regeneration_cutoff(eps);
    let mut counts = vec![0u64; bins * bins];
    let origin = MarkovizedRecord {
        psi: start,
        ..MarkovizedRecord::initial(start.phi())
    };
    for _ in 0..samples {
        let rec = advance(start.phi(), PrimitiveDraw::sample(s), eps, &origin);
        if rec.zeta >= cutoff {
            continue;
        }
        let i = (truncexp_cdf(rec.zeta, cutoff) * bins as f64) as usize;
        let j = ((rec.psi.theta_tilde / TAU) * bins as f64) as usize;
        counts[i.min(bins - 1) * bins + j.min(bins - 1)] += 1;
    }
    let target = 1.0 / (bins * bins) as f64;
    Ok(counts
        .iter()
        .map(|&c| c as f64 / samples as f64 / target)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_process::{step_chain, LimitChainState};
    use crate::randomness::split_stream;

    #[test]
    fn loop_free_flight_has_no_hat_part() {
        let (psi, rec) = step_psi(PsiState::initial(0.0), PrimitiveDraw { xi: 1.0, alpha: 0.5 * PI }, 0.01).unwrap();
        assert_eq!(rec.nu, 0);
        assert_eq!((psi.r_hat, psi.theta_hat), (0.0, 0.0));
        let expected = PlanarVector::from_polar(2.0 * 0.5f64.sin(), 0.5 * PI + 0.5);
        assert!(rec.y_tilde.distance(expected) < 1e-15);
        assert!((rec.zeta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(step_psi(PsiState::initial(0.0), PrimitiveDraw { xi: 1.0, alpha: 1.0 }, 0.0).is_err());
        assert!(step_psi(PsiState::initial(0.0), PrimitiveDraw { xi: 1.0, alpha: 1.0 }, 0.5).is_err());
        assert!(doeblin_delta_eps(0.2).is_err());
    }

    #[test]
    fn small_eps_close_to_limit_step() {
        let mut s = split_stream(11, 0);
        let eps = 1e-3;
        for _ in 0..10_000 {
            let phi = sample_uniform_angle(&mut s);
            let draw = PrimitiveDraw::sample(&mut s);
            let (_, rec) = step_psi(PsiState::initial(phi), draw, eps).unwrap();
            let limit = step_chain(LimitChainState::initial(phi), draw);
            let y = PlanarVector::from_polar(2.0 * (0.5 * limit.zeta).sin(), limit.theta);
            // Same ν: the final arcs end in the same direction and their
            // starts differ by νβ ≤ 2νε; the contact-point shift adds ≤ 2ε.
            if rec.nu == crate::geometry::decompose_flight(draw.xi, 0.0).0 {
                let bound = 2.0 * eps * rec.nu as f64 + if rec.nu > 0 { 2.0 * eps } else { 0.0 };
                assert!(rec.displacement(eps).distance(y) <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn psi_reconstructs_phi() {
        let mut s = split_stream(12, 0);
        let run = simulate_markovized_records(200.0, 0.05, &mut s).unwrap();
        for r in &run.records[1..] {
            let d = (wrap_angle(r.psi.phi()) - wrap_angle(r.phi)).abs();
            assert!(d.min(TAU - d) < 1e-7);
        }
    }

    #[test]
    fn psi_chain_matches_records() {
        let mut s = split_stream(13, 0);
        let run = simulate_markovized_records(100.0, 0.05, &mut s).unwrap();
        let mut psi = run.records[0].psi;
        for r in &run.records[1..] {
            let (next, _) = step_psi(psi, r.draw, 0.05).unwrap();
            let d = (next.theta_tilde - r.psi.theta_tilde).abs();
            assert!(d.min(TAU - d) < 1e-6);
            assert!((next.r_tilde - r.psi.r_tilde).abs() < 1e-12);
            assert!((next.r_hat - r.psi.r_hat).abs() < 1e-12);
            psi = next;
        }
    }

    #[test]
    fn mechanics_match_algebra() {
        let mut s = split_stream(14, 0);
        for eps in [0.01, 0.1, 0.3] {
            let mut prev = MarkovizedRecord::initial(1.0);
            for _ in 0..3_000 {
                let draw = PrimitiveDraw::sample(&mut s);
                let arcs = interpolate_segment(&prev, draw, eps).unwrap();
                prev = advance(prev.phi, draw, eps, &prev);
                assert_eq!(arcs.len() as u64, prev.nu + 1);
            }
        }
    }

    #[test]
    fn mechanics_with_forced_loops() {
        let eps = 0.1;
        for alpha in [0.3, 1.0, PI, 4.0, 6.0] {
            let beta = beta_unchecked(alpha, eps);
            let xi = 2.0 * (TAU - beta) + 0.7;
            let prev = MarkovizedRecord::initial(0.4);
            let arcs = interpolate_segment(&prev, PrimitiveDraw { xi, alpha }, eps).unwrap();
            assert_eq!(arcs.len(), 3);
            for a in &arcs[..2] {
                assert!((a.swept - (TAU - beta)).abs() < 1e-9);
            }
            // total turning over the flight is (ν+1)α − νβ plus the arcs
            let rec = advance(prev.phi, PrimitiveDraw { xi, alpha }, eps, &prev);
            let turning = rec.phi - prev.phi - rec.zeta;
            assert!((turning - (3.0 * alpha - 2.0 * beta)).abs() < 1e-9);
        }
    }

    #[test]
    fn head_on_contact_point_moves_by_gamma() {
        let eps = 0.1;
        let beta = beta_unchecked(PI, eps);
        let prev = MarkovizedRecord::initial(0.0);
        let draw = PrimitiveDraw { xi: TAU - beta + 0.2, alpha: PI };
        let arcs = interpolate_segment(&prev, draw, eps).unwrap();
        let rec = advance(prev.phi, draw, eps, &prev);
        assert!((arcs[1].start_point() - (rec.y_hat * eps)).norm() < 1e-12);
        // contact point sits below the x axis, just right of the origin
        assert!(rec.y_hat.y < 0.0 && rec.y_hat.x > 0.0);
    }

    #[test]
    fn run_is_continuous_and_unit_speed() {
        let mut s = split_stream(15, 0);
        let run = simulate_markovized(100.0, 0.02, &mut s).unwrap();
        let total: f64 = run.arcs.iter().map(|a| a.swept).sum();
        assert!((total - run.end_time()).abs() < 1e-9);
        for w in run.arcs.windows(2) {
            assert!(w[0].end_point().distance(w[1].start_point()) < 1e-9);
            assert!((w[0].t1() - w[1].t0).abs() < 1e-9);
        }
        for (j, r) in run.records.iter().enumerate().skip(1) {
            assert!(run.segment(j).last().unwrap().end_point().distance(r.position) < 1e-9);
            assert!(r.displacement(0.02).norm() <= 2.0 + 2.0 * 0.02 + 1e-12);
        }
        assert!(run.end_time() >= 100.0);
    }

    #[test]
    fn records_only_run_uses_same_draws() {
        let a = simulate_markovized(50.0, 0.02, &mut split_stream(16, 3)).unwrap();
        let b = simulate_markovized_records(50.0, 0.02, &mut split_stream(16, 3)).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn eps_constant_reasonable() {
        let d = doeblin_delta_eps(0.01).unwrap();
        let d0 = crate::limit_process::doeblin_delta_limit();
        assert!(d > 0.0 && (d / d0 - 1.0).abs() < 0.3);
    }

    #[test]
    fn empirical_kernel_dominates_constant() {
        let eps = 0.01;
        let d = doeblin_delta_eps(eps).unwrap();
        let mut s = split_stream(17, 0);
        for start in [PsiState::initial(0.0), PsiState { eps_sign: -1, r_tilde: 0.3, theta_tilde: 2.0, r_hat: 0.0, theta_hat: 0.0 }] {
            let ratio = empirical_kernel_ratio(start, eps, 20, 1_000_000, &mut s).unwrap();
            assert!(ratio >= d, "{ratio} {d}");
        }
    }
}
