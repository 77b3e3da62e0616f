//! Lower bounds for the one-step transition kernels of the limit and
//! Markovized chains.
//!
//! Both chains move their angle by `W = (ν+1)α − νβ(α)` (mod 2π) plus a term
//! that depends only on the previous state and the new ζ. For ζ below
//! [`regeneration_cutoff`] the joint density of (ζ, W) factorises as
//! `e^{−ζ} h(w)`, so `inf h` yields a minorization constant that is uniform
//! in the starting state.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::beta_unchecked;
use crate::randomness::alpha_density;

/// Terms beyond this many loops contribute less than `e^{-2π·8}` and are dropped.
const MAX_LOOPS: u64 = 8;

const DEFAULT_GRID: usize = 8192;

/// Largest ζ for which every scattering angle admits ζ as a final arc.
pub fn regeneration_cutoff(eps: f64) -> f64 {
    TAU - 2.0 * eps.asin()
}

fn beta_prime(a: f64, eps: f64) -> f64 {
    let c = (0.5 * a).cos();
    eps * (c + eps) / (1.0 + 2.0 * eps * c + eps * eps)
}

/// Angle `a ∈ [0, 2π]` with `(n+1)a − nβ(a) = target`.
fn turning_preimage(n: u64, target: f64, eps: f64) -> f64 {
    let nf = n as f64;
    let m = nf + 1.0;
    let mut a = target / m;
    for _ in 0..60 {
        let g = m * a - nf * beta_unchecked(a, eps) - target;
        let dg = m - nf * beta_prime(a, eps);
        let next = (a - g / dg).clamp(0.0, TAU);
        if (next - a).abs() <= 1e-15 * (1.0 + a) {
            return next;
        }
        a = next;
    }
    a
}

/// Density `h(w)` of the turning angle, restricted to `ν ≤ max_loops`.
///
/// Each loop is weighted by `e^{−ν(2π−β)}`, the sub-probability that the
/// flight contains `ν` full recollision loops; the factor `e^{−ζ}` of the
/// final arc is left out.
pub fn turning_density_truncated(w: f64, eps: f64, max_loops: u64) -> f64 {
    let w = w.rem_euclid(TAU);
    let mut total = 0.0;
    for n in 0..=max_loops {
        let nf = n as f64;
        for k in 0..=n {
            let a = turning_preimage(n, w + TAU * k as f64, eps);
            let b = beta_unchecked(a, eps);
            let jac = nf + 1.0 - nf * beta_prime(a, eps);
            total += alpha_density(a) * (-nf * (TAU - b)).exp() / jac;
        }
    }
    total
}

pub fn turning_density(w: f64, eps: f64) -> f64 {
    turning_density_truncated(w, eps, MAX_LOOPS)
}

/// Minimum of a function on the circle: dense grid, then golden-section
/// refinement around the best grid point.
fn circle_minimum(f: impl Fn(f64) -> f64, grid: usize) -> (f64, f64) {
    let step = TAU / grid as f64;
    let (mut best_w, mut best) = (0.0, f(0.0));
    for i in 1..grid {
        let w = step * i as f64;
        let v = f(w);
        if v < best {
            best = v;
            best_w = w;
        }
    }
    let (mut lo, mut hi) = (best_w - step, best_w + step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - r * (hi - lo);
        let m2 = lo + r * (hi - lo);
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let w = 0.5 * (lo + hi);
    let v = f(w);
    if v < best {
        (v, w.rem_euclid(TAU))
    } else {
        (best, best_w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    pub eps: f64,
    /// Regeneration measure is TruncExp(1, cutoff) × Uniform in (ζ, θ).
    pub cutoff: f64,
    pub turning_infimum: f64,
    pub argmin: f64,
    pub delta: f64,
    /// Same bound when only loop-free flights are allowed to regenerate,
    /// i.e. a one-step minorization of the full five-component state.
    pub loop_free_delta: f64,
}

pub fn minorization_report(eps: f64) -> MinorizationReport {
    let cutoff = regeneration_cutoff(eps);
    let mass = -(-cutoff).exp_m1();
    let (inf, argmin) = circle_minimum(|w| turning_density(w, eps), DEFAULT_GRID);
    let (loop_free, _) = circle_minimum(|w| turning_density_truncated(w, eps, 0), DEFAULT_GRID);
    MinorizationReport {
        eps,
        cutoff,
        turning_infimum: inf,
        argmin,
        delta: TAU * mass * inf,
        loop_free_delta: TAU * mass * loop_free,
    }
}

/// Retrospective regeneration coin for a step with turning angle `w` and
/// `ζ < cutoff`: succeeds with probability `scale / h(w)`, where
/// `scale = δ / (2π (1 − e^{−cutoff}))`.
pub(crate) fn regeneration_coin(scale: f64, w: f64, eps: f64, u: f64) -> bool {
    // h(w) ≥ alpha_density(w), so most draws are rejected without evaluating h.
    let direct = alpha_density(w.rem_euclid(TAU));
    if u * direct >= scale {
        return false;
    }
    u * turning_density(w, eps) < scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::alpha_cdf;

    fn geometric(n: u64) -> f64 {
        (-(TAU * n as f64)).exp() * -(-TAU).exp_m1()
    }

    #[test]
    fn limit_density_matches_closed_form_at_zero() {
        // At w = 0 the k-th fold of (n+1)α lands at 2πk/(n+1).
        let closed: f64 = (0..=MAX_LOOPS)
            .map(|n| {
                let m = (n + 1) as f64;
                let fold = if n == 0 {
                    0.0
                } else {
                    (std::f64::consts::PI / (2.0 * m)).tan().recip() / (4.0 * m)
                };
                (-(TAU * n as f64)).exp() * fold
            })
            .sum();
        assert!((turning_density(0.0, 0.0) - closed).abs() < 1e-12);
    }

    #[test]
    fn limit_delta_near_leading_term() {
        let r = minorization_report(0.0);
        let leading = TAU * (-TAU).exp() * -(-TAU).exp_m1() / 8.0;
        assert!((r.delta / leading - 1.0).abs() < 0.01, "{} {}", r.delta, leading);
        assert!(r.argmin < 1e-3 || TAU - r.argmin < 1e-3);
    }

    /// Mean density of (ν+1)α mod 2π over `[lo, hi]`, from exact CDF differences.
    fn bin_density(lo: f64, hi: f64) -> f64 {
        let mut mass = 0.0;
        for n in 0..=MAX_LOOPS {
            let m = (n + 1) as f64;
            for k in 0..=n {
                let shift = TAU * k as f64;
                mass += geometric(n) * (alpha_cdf((hi + shift) / m) - alpha_cdf((lo + shift) / m));
            }
        }
        mass / (hi - lo)
    }

    #[test]
    fn limit_delta_against_bin_masses() {
        // Independent route: the coarse scan locates the lowest bin, which
        // must touch 0 or 2π; fine bins there give the infimum.
        let bins = 2_000;
        let width = TAU / bins as f64;
        let lowest = (0..bins)
            .min_by(|&a, &b| {
                let da = bin_density(width * a as f64, width * (a + 1) as f64);
                let db = bin_density(width * b as f64, width * (b + 1) as f64);
                da.total_cmp(&db)
            })
            .unwrap();
        assert!(lowest == 0 || lowest == bins - 1);
        let fine = 1e-6;
        let oracle = TAU * bin_density(0.0, fine).min(bin_density(TAU - fine, TAU));
        let delta = minorization_report(0.0).delta;
        assert!((delta / oracle - 1.0).abs() < 1e-3, "{delta} {oracle}");
    }

    #[test]
    fn density_integrates_to_loop_weights() {
        for eps in [0.0, 0.05] {
            let n = 20_000;
            let integral: f64 = (0..n)
                .map(|i| turning_density((i as f64 + 0.5) * TAU / n as f64, eps))
                .sum::<f64>()
                * TAU
                / n as f64;
            // Σ_ν E[e^{−ν(2π−β)}] computed by quadrature over α.
            let m = 20_000;
            let expected: f64 = (0..m)
                .map(|i| {
                    let a = (i as f64 + 0.5) * TAU / m as f64;
                    let q = (-(TAU - beta_unchecked(a, eps))).exp();
                    alpha_density(a) * (1.0 - q.powi(MAX_LOOPS as i32 + 1)) / (1.0 - q)
                })
                .sum::<f64>()
                * TAU
                / m as f64;
            assert!((integral - expected).abs() < 1e-6, "{integral} {expected}");
        }
    }

    #[test]
    fn preimage_solves_turning_equation() {
        for n in 0..4u64 {
            for k in 0..=n {
                let target = 0.7 + TAU * k as f64;
                let a = turning_preimage(n, target, 0.08);
                let g = (n + 1) as f64 * a - n as f64 * beta_unchecked(a, 0.08);
                assert!((g - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eps_constant_is_continuous_at_zero() {
        let d0 = minorization_report(0.0).delta;
        let d = minorization_report(1e-3).delta;
        assert!((d / d0 - 1.0).abs() < 0.05);
        assert_eq!(minorization_report(1e-3).loop_free_delta, 0.0);
    }
}
