//! The low-density limit process: a unit-speed particle that, at
//! Exp(1)-spaced times, turns by an angle with density `sin(x/2)/4` and then
//! keeps turning by the same angle every `2π` until the next fresh turn.
//!
//! Sampled at fresh-collision times the displacement is a function of the
//! Markov chain `(ζ_n, θ_n)` where `ζ_n` is the final arc of flight `n` and
//! `θ_n` the direction of its chord.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{decompose_flight, wrap_angle, ArcSegment, PlanarVector};
use crate::minorization::minorization_report;
use crate::randomness::{sample_truncexp, sample_uniform_angle, PrimitiveDraw, UniformSource};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitChainState {
    pub zeta: f64,
    pub theta: f64,
}

impl LimitChainState {
    /// State encoding the initial direction: an empty arc whose chord points
    /// along `phi0`.
    pub fn initial(phi0: f64) -> Self {
        Self {
            zeta: 0.0,
            theta: wrap_angle(phi0),
        }
    }

    /// Velocity direction at the end of the flight that produced this state.
    pub fn phi(&self) -> f64 {
        self.theta + 0.5 * self.zeta
    }
}

pub fn step_chain(state: LimitChainState, draw: PrimitiveDraw) -> LimitChainState {
    step_chain_with_loops(state, draw).0
}

pub(crate) fn step_chain_with_loops(state: LimitChainState, draw: PrimitiveDraw) -> (LimitChainState, u64) {
    let (nu, zeta) = decompose_flight(draw.xi, 0.0);
    let theta = state.phi() + (nu as f64 + 1.0) * draw.alpha + 0.5 * zeta;
    (
        LimitChainState {
            zeta,
            theta: wrap_angle(theta),
        },
        nu,
    )
}

/// Chord of the final arc, `2 sin(ζ'/2) e^{iθ'}`.
pub fn step_displacement(
    prev: LimitChainState,
    new: LimitChainState,
    draw: PrimitiveDraw,
) -> PlanarVector {
    debug_assert!({
        let check = step_chain(prev, draw);
        (check.zeta - new.zeta).abs() < 1e-12
    });
    PlanarVector::from_polar(2.0 * (0.5 * new.zeta).sin(), new.theta)
}

pub fn sample_stationary<S: UniformSource + ?Sized>(s: &mut S) -> LimitChainState {
    let zeta = sample_truncexp(s, TAU).expect("positive cutoff");
    let theta = sample_uniform_angle(s);
    LimitChainState { zeta, theta }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitStep {
    pub state: LimitChainState,
    pub nu: u64,
    pub y: PlanarVector,
    pub position: PlanarVector,
}

/// `n_steps` fresh collisions from the origin with a uniform initial
/// direction. Entry 0 holds the initial state and the origin.
pub fn simulate_discrete<S: UniformSource + ?Sized>(n_steps: usize, s: &mut S) -> Vec<LimitStep> {
    let phi0 = sample_uniform_angle(s);
    let mut state = LimitChainState::initial(phi0);
    let mut position = PlanarVector::ZERO;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(LimitStep {
        state,
        nu: 0,
        y: PlanarVector::ZERO,
        position,
    });
    for _ in 0..n_steps {
        let draw = PrimitiveDraw::sample(s);
        let (next, nu) = step_chain_with_loops(state, draw);
        let y = step_displacement(state, next, draw);
        position += y;
        state = next;
        out.push(LimitStep {
            state,
            nu,
            y,
            position,
        });
    }
    out
}

/// Continuous-time path built from an initial direction and a list of draws.
///
/// Fresh collisions happen at `tau[n] = ξ_1 + … + ξ_n`; between `tau[n]` and
/// `tau[n+1]` the particle runs `nu[n+1]` full loops, turning by `α_{n+1}`
/// at each, and then an arc of length `zeta[n+1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitTrajectory {
    pub phi0: f64,
    pub draws: Vec<PrimitiveDraw>,
    pub tau: Vec<f64>,
    pub nu: Vec<u64>,
    pub zeta: Vec<f64>,
    /// Unreduced velocity angle just before each fresh collision.
    pub phi: Vec<f64>,
    pub positions: Vec<PlanarVector>,
}

pub fn build_continuous(phi0: f64, draws: &[PrimitiveDraw]) -> LimitTrajectory {
    let n = draws.len();
    let mut tau = Vec::with_capacity(n + 1);
    let mut nu = Vec::with_capacity(n + 1);
    let mut zeta = Vec::with_capacity(n + 1);
    let mut phi = Vec::with_capacity(n + 1);
    let mut positions = Vec::with_capacity(n + 1);
    tau.push(0.0);
    nu.push(0);
    zeta.push(0.0);
    phi.push(phi0);
    positions.push(PlanarVector::ZERO);
    for d in draws {
        let (k, z) = decompose_flight(d.xi, 0.0);
        let last_phi = *phi.last().unwrap();
        let turned = last_phi + (k as f64 + 1.0) * d.alpha;
        let chord = PlanarVector::from_polar(2.0 * (0.5 * z).sin(), turned + 0.5 * z);
        positions.push(*positions.last().unwrap() + chord);
        phi.push(turned + z);
        tau.push(tau.last().unwrap() + d.xi);
        nu.push(k);
        zeta.push(z);
    }
    LimitTrajectory {
        phi0,
        draws: draws.to_vec(),
        tau,
        nu,
        zeta,
        phi,
        positions,
    }
}

/// Draws fresh collisions until the horizon `t_end` is covered.
pub fn simulate_until<S: UniformSource + ?Sized>(t_end: f64, s: &mut S) -> LimitTrajectory {
    let phi0 = sample_uniform_angle(s);
    let mut draws = Vec::new();
    let mut t = 0.0;
    while t < t_end {
        let d = PrimitiveDraw::sample(s);
        t += d.xi;
        draws.push(d);
    }
    build_continuous(phi0, &draws)
}

impl LimitTrajectory {
    pub fn end_time(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    pub fn n_collisions(&self) -> usize {
        self.draws.len()
    }

    /// Recollision times of the scatterer met at `tau[n]`, starting with
    /// `tau[n]` itself.
    pub fn recollision_times(&self, n: usize) -> Vec<f64> {
        let loops = self.nu.get(n + 1).copied().unwrap_or(0);
        (0..=loops).map(|k| self.tau[n] + TAU * k as f64).collect()
    }

    /// Locates `t` in `(tau[n] + 2πk, ...]`; returns `(n, k, time since the
    /// breakpoint)`.
    fn locate(&self, t: f64) -> Result<(usize, u64, f64)> {
        let end = self.end_time();
        if !(0.0..=end).contains(&t) || self.draws.is_empty() {
            return Err(Error::TimeOutOfRange { t, end });
        }
        // first n with tau[n+1] >= t
        let n = self.tau.partition_point(|&x| x < t).saturating_sub(1);
        let s = t - self.tau[n];
        let loops = self.nu[n + 1];
        let k = if s <= 0.0 {
            0
        } else {
            ((s / TAU).ceil() as u64).saturating_sub(1).min(loops)
        };
        Ok((n, k, s - TAU * k as f64))
    }

    /// Velocity angle at time `t`, unreduced, continuous from the left.
    pub fn phi_at(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(self.phi0);
        }
        let (n, k, s) = self.locate(t)?;
        Ok(self.phi[n] + (k as f64 + 1.0) * self.draws[n].alpha + s)
    }

    pub fn velocity_at(&self, t: f64) -> Result<PlanarVector> {
        Ok(PlanarVector::unit(self.phi_at(t)?))
    }

    pub fn position_at(&self, t: f64) -> Result<PlanarVector> {
        if t == 0.0 {
            return Ok(PlanarVector::ZERO);
        }
        let (n, k, s) = self.locate(t)?;
        let start = self.phi[n] + (k as f64 + 1.0) * self.draws[n].alpha;
        Ok(self.positions[n] + arc_chord(start, s))
    }

    /// Straight pieces of angle are unit-circle arcs: one per loop plus the
    /// final arc of each flight.
    pub fn arcs(&self) -> Vec<ArcSegment> {
        let mut out = Vec::new();
        for n in 0..self.draws.len() {
            let p = self.positions[n];
            for k in 0..=self.nu[n + 1] {
                let dir = self.phi[n] + (k as f64 + 1.0) * self.draws[n].alpha;
                let swept = if k < self.nu[n + 1] { TAU } else { self.zeta[n + 1] };
                out.push(ArcSegment::from_state(
                    p,
                    PlanarVector::unit(dir),
                    swept,
                    self.tau[n] + TAU * k as f64,
                ));
            }
        }
        out
    }
}

/// Displacement after running an arc of length `s` starting in direction `dir`.
pub(crate) fn arc_chord(dir: f64, s: f64) -> PlanarVector {
    PlanarVector::from_polar(2.0 * (0.5 * s).sin(), dir + 0.5 * s)
}

/// Döblin constant of the `(ζ, θ)` chain with respect to its stationary law.
pub fn doeblin_delta_limit() -> f64 {
    minorization_report(0.0).delta
}
