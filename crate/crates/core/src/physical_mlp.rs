//! Event-driven simulation of a charged particle among Poisson hard disks
//! in a perpendicular magnetic field, and an operational classification of
//! how its trajectory ends up trapped or escaping.

use std::collections::HashSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::environment::ScattererField;
use crate::error::{Error, Result};
use crate::geometry::{arc_entry, reflect_unchecked, ArcSegment, Disk, PlanarVector};
use crate::randomness::{sample_uniform_angle, UniformSource};

/// Distance by which the particle is pushed off a scatterer after a bounce.
pub const NUDGE: f64 = 1e-12;

/// Accepted mismatch between `|pos − center|` and ε at a collision.
pub const CONTACT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpState {
    pub pos: PlanarVector,
    pub vel: PlanarVector,
    pub t: f64,
    pub collisions: u64,
    pub last_scatterer: Option<PlanarVector>,
}

impl MlpState {
    pub fn new(pos: PlanarVector, vel: PlanarVector) -> Self {
        Self {
            pos,
            vel,
            t: 0.0,
            collisions: 0,
            last_scatterer: None,
        }
    }

    pub fn larmor_center(&self) -> PlanarVector {
        self.pos + self.vel.perp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioLabel {
    /// Caged by a cluster of overlapping scatterers.
    A,
    /// Free Larmor orbit from the start.
    B,
    /// Trapped by finitely many scatterers and the field.
    C,
    /// Escaped.
    D,
    Unresolved,
}

/// Thresholds of the operational A/C/D classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapCutoffs {
    /// Leaving this ball around the start counts as escape.
    pub r_max: f64,
    /// This long without a fresh scatterer while confined counts as trapped.
    pub t_max: f64,
    /// Trapped runs whose excursion stays below this are caged (A), others C.
    pub cage_radius: f64,
    pub max_collisions: u64,
}

impl Default for TrapCutoffs {
    fn default() -> Self {
        Self {
            r_max: 20.0,
            t_max: 1e3,
            cage_radius: 2.0,
            max_collisions: 10_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub center: PlanarVector,
    pub hit: PlanarVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalRun {
    pub arcs: Vec<ArcSegment>,
    pub label: ScenarioLabel,
    pub collisions: Vec<CollisionEvent>,
    pub final_state: MlpState,
    pub distinct_scatterers: usize,
    pub max_excursion: f64,
    pub cutoffs: TrapCutoffs,
}

/// Earliest collision on the current Larmor orbit within one full turn.
pub fn next_event(state: &MlpState, field: &mut ScattererField) -> Option<(f64, PlanarVector, PlanarVector)> {
    next_event_within(state, field, TAU)
}

fn next_event_within(
    state: &MlpState,
    field: &mut ScattererField,
    max_sweep: f64,
) -> Option<(f64, PlanarVector, PlanarVector)> {
    let eps = field.eps();
    let c = state.larmor_center();
    let a0 = (state.pos - c).arg();
    let mut best: Option<(f64, PlanarVector)> = None;
    field.for_each_near(c, 1.0 + eps + 1e-9, |b| {
        if let Some(sweep) = arc_entry(c, a0, &Disk { center: b, radius: eps }) {
            if sweep <= max_sweep && best.is_none_or(|(s, _)| sweep < s) {
                best = Some((sweep, b));
            }
        }
    });
    best.map(|(sweep, b)| (state.t + sweep, b, c + PlanarVector::unit(a0 + sweep)))
}

/// Elastic bounce off the disk centred at `center`.
pub fn collide(state: &MlpState, center: PlanarVector, eps: f64) -> Result<MlpState> {
    let rel = state.pos - center;
    let d = rel.norm();
    if (d - eps).abs() > CONTACT_TOL {
        return Err(Error::NotOnBoundary { distance: d, radius: eps });
    }
    let n = rel * (1.0 / d);
    let vel = reflect_unchecked(state.vel, n).normalized();
    Ok(MlpState {
        pos: state.pos + n * NUDGE,
        vel,
        t: state.t,
        collisions: state.collisions + 1,
        last_scatterer: Some(center),
    })
}

/// True iff the orbit through `state` misses every scatterer.
pub fn orbit_is_free(state: &MlpState, field: &mut ScattererField) -> bool {
    let eps = field.eps();
    let c = state.larmor_center();
    let mut free = true;
    field.for_each_near(c, 1.0 + eps, |b| {
        if ((b - c).norm() - 1.0).abs() < eps {
            free = false;
        }
    });
    free
}

/// Largest distance from the origin along an arc.
fn arc_excursion(a: &ArcSegment) -> f64 {
    let far = a.center.norm() + 1.0;
    let offset = (a.center.arg() - a.start_angle).rem_euclid(TAU);
    if a.swept >= TAU || offset <= a.swept {
        far
    } else {
        a.start_point().norm().max(a.end_point().norm())
    }
}

/// Runs the particle from the origin with a uniform initial direction until
/// `t_end` or until the run is classified.
///
/// The field must already be conditioned on the origin being free.
pub fn simulate_physical<S: UniformSource + ?Sized>(
    field: &mut ScattererField,
    t_end: f64,
    s: &mut S,
    cutoffs: TrapCutoffs,
) -> Result<PhysicalRun> {
    if !field.is_free(PlanarVector::ZERO) {
        return Err(Error::StartInsideDisk {
            distance: 0.0,
            radius: field.eps(),
        });
    }
    let vel = PlanarVector::unit(sample_uniform_angle(s));
    let mut state = MlpState::new(PlanarVector::ZERO, vel);
    if orbit_is_free(&state, field) {
        let arc = ArcSegment::from_state(state.pos, state.vel, TAU, 0.0);
        state.t = TAU;
        return Ok(PhysicalRun {
            arcs: vec![arc],
            label: ScenarioLabel::B,
            collisions: Vec::new(),
            final_state: state,
            distinct_scatterers: 0,
            max_excursion: 2.0,
            cutoffs,
        });
    }
    let eps = field.eps();
    let mut arcs = Vec::new();
    let mut log = Vec::new();
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let mut last_fresh = 0.0;
    let mut excursion: f64 = 0.0;
    let label = loop {
        let remaining = t_end - state.t;
        let Some((t_hit, center, hit)) = next_event_within(&state, field, remaining.min(TAU)) else {
            let arc = ArcSegment::from_state(state.pos, state.vel, remaining.max(0.0), state.t);
            excursion = excursion.max(arc_excursion(&arc));
            state.pos = arc.end_point();
            state.vel = arc.end_velocity();
            state.t = t_end;
            arcs.push(arc);
            break if excursion > cutoffs.r_max {
                ScenarioLabel::D
            } else {
                ScenarioLabel::Unresolved
            };
        };
        let arc = ArcSegment::from_state(state.pos, state.vel, t_hit - state.t, state.t);
        excursion = excursion.max(arc_excursion(&arc));
        state.vel = arc.end_velocity();
        state.pos = hit;
        state.t = t_hit;
        arcs.push(arc);
        state = collide(&state, center, eps)?;
        log.push(CollisionEvent { t: t_hit, center, hit });
        if seen.insert((center.x.to_bits(), center.y.to_bits())) {
            last_fresh = t_hit;
        }
        if excursion > cutoffs.r_max {
            break ScenarioLabel::D;
        }
        if state.t - last_fresh >= cutoffs.t_max {
            break if excursion < cutoffs.cage_radius {
                ScenarioLabel::A
            } else {
                ScenarioLabel::C
            };
        }
        if state.collisions >= cutoffs.max_collisions {
            break ScenarioLabel::Unresolved;
        }
    };
    Ok(PhysicalRun {
        arcs,
        label,
        collisions: log,
        final_state: state,
        distinct_scatterers: seen.len(),
        max_excursion: excursion,
        cutoffs,
    })
}

/// Time-stepped reference dynamics: advance along the current orbit in
/// sweeps of `dt`; when a step ends inside a disk, place the contact by
/// linear interpolation of the signed distance and reflect there.
pub fn brute_trajectory(
    field: &mut ScattererField,
    start: MlpState,
    t_end: f64,
    dt: f64,
) -> Result<Vec<CollisionEvent>> {
    if !(dt > 0.0 && dt <= 1e-4) {
        return Err(Error::InvalidParameter(format!("time step must lie in (0, 1e-4], got {dt}")));
    }
    let eps = field.eps();
    let mut state = start;
    let mut log = Vec::new();
    // the disk just left is ignored until the particle is seen outside it
    let mut leaving: Option<PlanarVector> = None;
    while state.t < t_end {
        let c = state.larmor_center();
        let a0 = (state.pos - c).arg();
        let candidates = field.scatterers_near(c, 1.0 + eps + 1e-6);
        let gap = |p: PlanarVector, b: PlanarVector| p.distance(b) - eps;
        let mut prev_gaps: Vec<f64> = candidates.iter().map(|&b| gap(state.pos, b)).collect();
        let mut k = 1u64;
        let event = loop {
            let s = dt * k as f64;
            if state.t + s > t_end {
                break None;
            }
            let p = c + PlanarVector::unit(a0 + s);
            let mut found = None;
            for (i, &b) in candidates.iter().enumerate() {
                let g = gap(p, b);
                if leaving == Some(b) {
                    if g > 0.0 {
                        leaving = None;
                    }
                } else if g < 0.0 && found.is_none() {
                    let back = dt * prev_gaps[i] / (prev_gaps[i] - g);
                    found = Some((s - dt + back, b));
                }
                prev_gaps[i] = g;
            }
            if found.is_some() {
                break found;
            }
            k += 1;
        };
        let Some((sweep, b)) = event else {
            break;
        };
        let hit = c + PlanarVector::unit(a0 + sweep);
        let n = (hit - b).normalized();
        let vel = PlanarVector::unit(a0 + sweep + 0.5 * std::f64::consts::PI);
        state = MlpState {
            pos: hit,
            vel: reflect_unchecked(vel, n).normalized(),
            t: state.t + sweep,
            collisions: state.collisions + 1,
            last_scatterer: Some(b),
        };
        leaving = Some(b);
        log.push(CollisionEvent { t: state.t, center: b, hit });
    }
    Ok(log)
}

/// Event-driven counterpart of [`brute_trajectory`] from an explicit state.
pub fn event_trajectory(
    field: &mut ScattererField,
    start: MlpState,
    t_end: f64,
) -> Result<Vec<CollisionEvent>> {
    let eps = field.eps();
    let mut state = start;
    let mut log = Vec::new();
    while let Some((t_hit, center, hit)) = next_event_within(&state, field, (t_end - state.t).min(TAU)) {
        let arc = ArcSegment::from_state(state.pos, state.vel, t_hit - state.t, state.t);
        state.vel = arc.end_velocity();
        state.pos = hit;
        state.t = t_hit;
        state = collide(&state, center, eps)?;
        log.push(CollisionEvent { t: t_hit, center, hit });
    }
    Ok(log)
}

/// Random single-scatterer scene: a start state and a disk such that the
/// orbit reaches the disk after a sweep in `[0.2, 5]` and bounces off it with
/// a turning angle in `[0.3, 2π − 0.3]`.
pub fn single_scatterer_scene<S: UniformSource + ?Sized>(s: &mut S) -> (MlpState, PlanarVector, f64) {
    let eps = 0.05 + 0.2 * s.next_uniform();
    let alpha = 0.3 + (TAU - 0.6) * s.next_uniform();
    let contact = PlanarVector::new(4.0 * s.next_uniform() - 2.0, 4.0 * s.next_uniform() - 2.0);
    let u = PlanarVector::unit(TAU * s.next_uniform());
    let normal = u.cmul(PlanarVector::unit(0.5 * alpha)).perp();
    let center = contact - normal * eps;
    let back = 0.2 + 4.8 * s.next_uniform();
    // run the orbit backwards from the contact point
    let c = contact + u.perp();
    let a = (contact - c).arg() - back;
    let pos = c + PlanarVector::unit(a);
    let vel = PlanarVector::unit(a + 0.5 * std::f64::consts::PI);
    (MlpState::new(pos, vel), center, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::split_stream;
    use std::f64::consts::PI;

    #[test]
    fn free_orbit_has_no_event() {
        let mut f = ScattererField::from_centers(0.1, &[PlanarVector::new(5.0, 5.0)]).unwrap();
        let st = MlpState::new(PlanarVector::ZERO, PlanarVector::new(1.0, 0.0));
        assert!(next_event(&st, &mut f).is_none());
    }

    #[test]
    fn single_scatterer_event_matches_closed_form() {
        let b = PlanarVector::new(1.0, 1.0);
        let mut f = ScattererField::from_centers(0.1, &[b]).unwrap();
        let st = MlpState::new(PlanarVector::ZERO, PlanarVector::new(1.0, 0.0));
        let (t, c, hit) = next_event(&st, &mut f).unwrap();
        assert!((t - (0.5 * PI - 2.0 * 0.05f64.asin())).abs() < 1e-12);
        assert_eq!(c, b);
        assert!((hit.distance(b) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn head_on_bounce_reverses() {
        let st = MlpState::new(PlanarVector::new(0.9, 0.0), PlanarVector::new(1.0, 0.0));
        let out = collide(&st, PlanarVector::new(1.0, 0.0), 0.1).unwrap();
        assert!(out.vel.distance(PlanarVector::new(-1.0, 0.0)) < 1e-15);
        assert!(out.pos.distance(PlanarVector::new(1.0, 0.0)) > 0.1);
        assert!(collide(&st, PlanarVector::new(1.5, 0.0), 0.1).is_err());
    }

    #[test]
    fn empty_field_is_scenario_b() {
        let mut f = ScattererField::new(0.0, 0.1, 1, 0).unwrap();
        let run = simulate_physical(&mut f, 100.0, &mut split_stream(1, 0), TrapCutoffs::default()).unwrap();
        assert_eq!(run.label, ScenarioLabel::B);
        assert_eq!(run.arcs.len(), 1);
        assert!(run.arcs[0].end_point().norm() < 1e-12);
    }

    #[test]
    fn dense_run_keeps_unit_speed_and_stays_outside() {
        let mut s = split_stream(2, 0);
        for k in 0..20 {
            let mut f = ScattererField::new(20.0, 0.1, 2, k).unwrap();
            f.condition_start_free(PlanarVector::ZERO);
            let run = simulate_physical(&mut f, 200.0, &mut s, TrapCutoffs::default()).unwrap();
            for e in &run.collisions {
                assert!((e.hit.distance(e.center) - 0.1).abs() < 1e-9);
            }
            for a in &run.arcs {
                let mid = a.point_at_sweep(0.5 * a.swept);
                assert!(f.is_free(mid), "arc passes through a scatterer");
            }
            assert!((run.final_state.vel.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn b_label_iff_orbit_clear() {
        let mut s = split_stream(3, 0);
        for k in 0..500 {
            let mut f = ScattererField::new(5.0, 0.05, 3, k).unwrap();
            f.condition_start_free(PlanarVector::ZERO);
            let run = simulate_physical(&mut f, 50.0, &mut s, TrapCutoffs::default()).unwrap();
            let c = run.arcs[0].center;
            let near = f
                .scatterers_near(c, 1.2)
                .iter()
                .any(|b| ((b.distance(c)) - 1.0).abs() < 0.05);
            assert_eq!(run.label == ScenarioLabel::B, !near && run.collisions.is_empty());
        }
    }

    #[test]
    fn turn_angles_follow_collision_law() {
        // uniform impact parameter on a unit-speed straight approach
        let mut s = split_stream(4, 0);
        let n = 100_000;
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let b = 2.0 * s.next_uniform() - 1.0;
            let hit = PlanarVector::new(-(1.0 - b * b).sqrt(), b);
            let out = reflect_unchecked(PlanarVector::new(1.0, 0.0), hit);
            let turn = out.arg().rem_euclid(TAU);
            counts[((turn / TAU) * bins as f64) as usize % bins] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let lo = TAU * i as f64 / bins as f64;
            let hi = TAU * (i + 1) as f64 / bins as f64;
            let p = crate::randomness::alpha_cdf(hi) - crate::randomness::alpha_cdf(lo);
            let sd = (n as f64 * p).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn brute_force_agrees_on_single_scatterer_scenes() {
        let mut s = split_stream(5, 0);
        for _ in 0..3 {
            let (start, b, eps) = single_scatterer_scene(&mut s);
            let mut f = ScattererField::from_centers(eps, &[b]).unwrap();
            let exact = event_trajectory(&mut f, start, 20.0).unwrap();
            let brute = brute_trajectory(&mut f, start, 20.0, 1e-5).unwrap();
            assert!(exact.len() >= 3);
            assert_eq!(exact.len(), brute.len());
            for (e, r) in exact.iter().zip(&brute) {
                assert!(e.hit.distance(r.hit) < 1e-6);
                assert!((e.t - r.t).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn brute_force_converges_with_step() {
        let mut s = split_stream(6, 0);
        let (start, b, eps) = single_scatterer_scene(&mut s);
        let mut f = ScattererField::from_centers(eps, &[b]).unwrap();
        let exact = event_trajectory(&mut f, start, 15.0).unwrap();
        let err = |dt: f64, f: &mut ScattererField| {
            let brute = brute_trajectory(f, start, 15.0, dt).unwrap();
            exact
                .iter()
                .zip(&brute)
                .map(|(e, r)| e.hit.distance(r.hit))
                .fold(0.0, f64::max)
        };
        let coarse = err(1e-4, &mut f);
        let fine = err(5e-5, &mut f);
        assert!(fine <= 0.5 * coarse + 1e-12, "{coarse} {fine}");
    }

    #[test]
    fn brute_force_closed_circle_without_scatterers() {
        let mut f = ScattererField::from_centers(0.1, &[]).unwrap();
        let st = MlpState::new(PlanarVector::ZERO, PlanarVector::new(0.0, 1.0));
        assert!(brute_trajectory(&mut f, st, TAU, 1e-4).unwrap().is_empty());
        assert!(brute_trajectory(&mut f, st, TAU, 1e-3).is_err());
    }

    #[test]
    fn reversal_retraces_collisions() {
        // Reversing the velocity and the sense of rotation retraces the path;
        // clockwise motion is obtained by mirroring in the x axis. The map is
        // chaotic (errors grow about tenfold per bounce), so each bounce is
        // reversed on its own: from contact k the mirrored reversed dynamics
        // must hit contact k-1 next.
        let mirror = |p: PlanarVector| PlanarVector::new(p.x, -p.y);
        let mut s = split_stream(7, 0);
        let mut f = ScattererField::new(8.0, 0.1, 7, 0).unwrap();
        f.condition_start_free(PlanarVector::ZERO);
        let run = simulate_physical(&mut f, 400.0, &mut s, TrapCutoffs::default()).unwrap();
        assert!(run.collisions.len() > 100, "{}", run.collisions.len());
        let centers: Vec<PlanarVector> = f.generated().iter().map(|(_, c)| mirror(*c)).collect();
        let mut mf = ScattererField::from_centers(0.1, &centers).unwrap();
        for k in 1..=100 {
            let e = run.collisions[k];
            let incoming = run.arcs[k].end_velocity();
            let outward = (e.hit - e.center).normalized();
            let start = MlpState::new(mirror(e.hit + outward * NUDGE), mirror(-incoming));
            let (_, center, hit) = next_event(&start, &mut mf).unwrap();
            assert_eq!(mirror(center), run.collisions[k - 1].center);
            assert!(mirror(hit).distance(run.collisions[k - 1].hit) < 1e-6);
        }
    }
}
