//! Monte Carlo simulation of the magnetic Lorentz gas in the plane.
//!
//! Three processes are built from the same primitive draws: the physical
//! process among Poisson-distributed hard disks, a Markovized variant that
//! remembers only its current scatterer, and the low-density limit process.
//! The remaining modules couple them and measure their statistics.

pub mod coupling;
pub mod environment;
pub mod error;
pub mod geometry;
pub mod legs_green;
pub mod limit_process;
pub mod markovized;
pub mod minorization;
pub mod physical_mlp;
pub mod randomness;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{ArcSegment, Disk, PlanarVector};
pub use randomness::{split_stream, PrimitiveDraw, RandomStream, UniformSource};
