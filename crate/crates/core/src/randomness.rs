//! Reproducible random streams and the primitive distributions driving every
//! process in the crate.
//!
//! A [`RandomStream`] is addressed by `(seed, stream_index)` and advanced by an
//! internal counter, so a trajectory can be replayed in isolation and any
//! number of trajectories can be generated in parallel without coordination.
//! The keystream is ChaCha8; the stream index selects the ChaCha nonce and the
//! counter is the keystream word position.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Anything that can hand out uniform variates on `[0, 1)`.
///
/// The samplers below are written against this trait so that tests can feed
/// them fixed uniform values and check the inverse-CDF maps directly.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;

    /// Uniform on the open interval `(0, 1)`.
    fn next_open_uniform(&mut self) -> f64 {
        // Midpoint of a 2^-53 grid cell never hits 0 or 1.
        let u = self.next_uniform();
        u + 0.5 * INV_2_53
    }
}

/// Counter-based random stream keyed by `(seed, stream_index)`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Number of 32-bit keystream words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Jump to an absolute keystream position.
    pub fn set_counter(&mut self, counter: u128) {
        self.rng.set_word_pos(counter);
    }

    /// A child stream whose key mixes this stream's seed with `tag`.
    ///
    /// Used for per-cell scatterer streams, which are addressed by
    /// `(trajectory, cell)` rather than by draw order.
    pub fn child(&self, tag: u64, stream_index: u64) -> Self {
        Self::new(mix_seed(mix_seed(self.seed, self.stream_index), tag), stream_index)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

impl UniformSource for RandomStream {
    fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV_2_53
    }
}

/// SplitMix64 finalizer over `seed ^ golden * (tag + 1)`.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for trajectory `index` of an experiment seeded with `seed`.
pub fn split_stream(seed: u64, index: u64) -> RandomStream {
    RandomStream::new(seed, index)
}

/// Flight time and scattering angle consumed by one fresh collision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveDraw {
    pub xi: f64,
    pub alpha: f64,
}

impl PrimitiveDraw {
    pub fn sample<S: UniformSource + ?Sized>(s: &mut S) -> Self {
        let xi = sample_exp(s);
        let alpha = sample_alpha(s);
        Self { xi, alpha }
    }
}

pub fn uniform_angle_from(u: f64) -> f64 {
    let a = TAU * u;
    if a >= TAU {
        0.0
    } else {
        a
    }
}

pub fn sample_uniform_angle<S: UniformSource + ?Sized>(s: &mut S) -> f64 {
    uniform_angle_from(s.next_uniform())
}

/// Inverse CDF of Exp(1).
pub fn exp_from(u: f64) -> f64 {
    -(-u).ln_1p()
}

pub fn sample_exp<S: UniformSource + ?Sized>(s: &mut S) -> f64 {
    -s.next_open_uniform().ln()
}

/// `2 arccos(v)` folded into `[0, 2π)`; `v` is uniform on `[-1, 1]`.
pub fn alpha_from_cosine(v: f64) -> f64 {
    let a = 2.0 * v.clamp(-1.0, 1.0).acos();
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Scattering angle with density `sin(x/2)/4` on `[0, 2π)`.
pub fn sample_alpha<S: UniformSource + ?Sized>(s: &mut S) -> f64 {
    alpha_from_cosine(2.0 * s.next_uniform() - 1.0)
}

pub fn alpha_density(x: f64) -> f64 {
    if (0.0..TAU).contains(&x) {
        0.25 * (0.5 * x).sin()
    } else {
        0.0
    }
}

pub fn alpha_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= TAU {
        1.0
    } else {
        0.5 * (1.0 - (0.5 * x).cos())
    }
}

/// Inverse CDF of Exp(1) truncated to `[0, cutoff]`.
pub fn truncexp_from(u: f64, cutoff: f64) -> f64 {
    let mass = -(-cutoff).exp_m1();
    (-(-u * mass).ln_1p()).min(cutoff)
}

pub fn sample_truncexp<S: UniformSource + ?Sized>(s: &mut S, cutoff: f64) -> Result<f64> {
    if !(cutoff > 0.0) {
        return Err(Error::NonPositiveCutoff(cutoff));
    }
    Ok(truncexp_from(s.next_uniform(), cutoff))
}

pub fn truncexp_cdf(x: f64, cutoff: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= cutoff {
        1.0
    } else {
        (-x).exp_m1() / (-cutoff).exp_m1()
    }
}

/// Mean of Exp(1) truncated to `[0, cutoff]`.
pub fn truncexp_mean(cutoff: f64) -> f64 {
    1.0 - cutoff * (-cutoff).exp() / -(-cutoff).exp_m1()
}

/// `P(ν = n)` for `ν = ⌊ξ / period⌋`, `ξ ~ Exp(1)`.
pub fn geometric_pmf(n: u64, period: f64) -> f64 {
    (-(period * n as f64)).exp() * -(-period).exp_m1()
}

#[cfg(test)]
pub(crate) struct FixedUniform(pub f64);

#[cfg(test)]
impl UniformSource for FixedUniform {
    fn next_uniform(&mut self) -> f64 {
        self.0
    }
}
