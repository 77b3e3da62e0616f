//! Planar kinematics of unit-speed, anticlockwise Larmor motion on circles of
//! radius one, elastic reflection on disks, and the ε-corrected angle
//! functions that govern a single-scatterer recollision cycle.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted deviation from unit norm for inputs that must be unit.
pub const UNIT_TOL: f64 = 1e-9;

/// Tangency tolerance on the circle–circle intersection cosine.
pub const TANGENCY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanarVector {
    pub x: f64,
    pub y: f64,
}

impl PlanarVector {
    pub const ZERO: Self = Self { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(r: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(r * c, r * s)
    }

    /// `e^{i angle}`
    pub fn unit(angle: f64) -> Self {
        Self::from_polar(1.0, angle)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    /// Argument in `(-π, π]`.
    pub fn arg(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Multiplication by `i`.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    /// Complex product.
    pub fn cmul(self, o: Self) -> Self {
        Self::new(self.x * o.x - self.y * o.y, self.x * o.y + self.y * o.x)
    }

    pub fn rotate(self, angle: f64) -> Self {
        self.cmul(Self::unit(angle))
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }

    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOL
    }
}

impl Add for PlanarVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for PlanarVector {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for PlanarVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for PlanarVector {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

impl Mul<PlanarVector> for f64 {
    type Output = PlanarVector;
    fn mul(self, v: PlanarVector) -> PlanarVector {
        v * self
    }
}

impl Neg for PlanarVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// `angle mod 2π` in `[0, 2π)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Piece of a unit-radius Larmor orbit traversed anticlockwise at unit speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub center: PlanarVector,
    /// Polar angle of the start point as seen from the center.
    pub start_angle: f64,
    /// Angle swept, equal to the arc's duration.
    pub swept: f64,
    pub t0: f64,
}

impl ArcSegment {
    /// Arc starting at `pos` with velocity `vel`.
    pub fn from_state(pos: PlanarVector, vel: PlanarVector, swept: f64, t0: f64) -> Self {
        let center = pos + vel.perp();
        Self {
            center,
            start_angle: (pos - center).arg(),
            swept,
            t0,
        }
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.swept
    }

    pub fn point_at_sweep(&self, s: f64) -> PlanarVector {
        self.center + PlanarVector::unit(self.start_angle + s)
    }

    pub fn velocity_at_sweep(&self, s: f64) -> PlanarVector {
        PlanarVector::unit(self.start_angle + s + 0.5 * PI)
    }

    pub fn point_at(&self, t: f64) -> PlanarVector {
        self.point_at_sweep(t - self.t0)
    }

    pub fn start_point(&self) -> PlanarVector {
        self.point_at_sweep(0.0)
    }

    pub fn end_point(&self) -> PlanarVector {
        self.point_at_sweep(self.swept)
    }

    pub fn end_velocity(&self) -> PlanarVector {
        self.velocity_at_sweep(self.swept)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: PlanarVector,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: PlanarVector, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "disk radius must be positive, got {radius}"
            )));
        }
        Ok(Self { center, radius })
    }
}

fn check_unit(v: PlanarVector) -> Result<()> {
    if v.is_unit() {
        Ok(())
    } else {
        Err(Error::NonUnitVector(v.norm()))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if (0.0..1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::EpsOutOfRange {
            eps,
            range: "[0, 1)",
        })
    }
}

/// Center of the Larmor orbit through `pos` with velocity `vel`.
pub fn larmor_center(pos: PlanarVector, vel: PlanarVector) -> Result<PlanarVector> {
    check_unit(vel)?;
    Ok(pos + vel.perp())
}

/// Arc of the Larmor orbit hidden inside the scatterer, as seen from the
/// orbit center, for a collision turning the velocity by `alpha`.
pub fn beta(alpha: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(beta_unchecked(alpha, eps))
}

/// Angle by which each recollision advances the contact point around the
/// scatterer. `beta + gamma = alpha`.
pub fn gamma(alpha: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(gamma_unchecked(alpha, eps))
}

pub(crate) fn beta_unchecked(alpha: f64, eps: f64) -> f64 {
    let (s, c) = (0.5 * alpha).sin_cos();
    2.0 * (eps * s).atan2(1.0 + eps * c)
}

pub(crate) fn gamma_unchecked(alpha: f64, eps: f64) -> f64 {
    let (s, c) = (0.5 * alpha).sin_cos();
    2.0 * s.atan2(c + eps)
}

/// Splits a flight time into `nu` full recollision loops of duration
/// `2π - beta` and a remainder `zeta`.
pub fn decompose_flight(xi: f64, beta: f64) -> (u64, f64) {
    let period = TAU - beta;
    let q = (xi / period).floor();
    let mut nu = if q > 0.0 { q as u64 } else { 0 };
    let mut zeta = xi - nu as f64 * period;
    if zeta < 0.0 {
        // floor rounded up across an exact multiple
        nu = nu.saturating_sub(1);
        zeta = xi - nu as f64 * period;
    } else if zeta >= period {
        nu += 1;
        zeta = xi - nu as f64 * period;
    }
    (nu, zeta.max(0.0))
}

/// `1 - 2⌊zeta/π⌋`: +1 on the first half of the loop, -1 on the second.
pub fn sign_eps(zeta: f64) -> i8 {
    if zeta < PI {
        1
    } else {
        -1
    }
}

/// First time an anticlockwise unit Larmor arc starting at `start` with
/// velocity `vel` enters `disk`.
///
/// Returns the swept angle in `(0, max_sweep]` and the contact point, or
/// `None` if the orbit misses the disk, merely grazes it, or reaches it only
/// after `max_sweep`.
pub fn first_arc_disk_hit(
    start: PlanarVector,
    vel: PlanarVector,
    disk: &Disk,
    max_sweep: f64,
) -> Result<Option<(f64, PlanarVector)>> {
    check_unit(vel)?;
    let d0 = start.distance(disk.center);
    if d0 < disk.radius * (1.0 - 1e-9) {
        return Err(Error::StartInsideDisk {
            distance: d0,
            radius: disk.radius,
        });
    }
    let center = start + vel.perp();
    Ok(arc_entry(center, (start - center).arg(), disk).and_then(|sweep| {
        (sweep <= max_sweep).then(|| (sweep, center + PlanarVector::unit((start - center).arg() + sweep)))
    }))
}

/// Sweep from polar angle `start_angle` on the unit circle about `center`
/// to the point where the anticlockwise orbit enters `disk`.
pub(crate) fn arc_entry(center: PlanarVector, start_angle: f64, disk: &Disk) -> Option<f64> {
    let to_disk = disk.center - center;
    let dist = to_disk.norm();
    if dist <= 0.0 {
        return None;
    }
    // sin²(h/2) in factored form keeps grazing hits accurate.
    let gap = dist - 1.0;
    let half_sq = (disk.radius - gap) * (disk.radius + gap) / (4.0 * dist);
    if 2.0 * half_sq <= TANGENCY_TOL || half_sq >= 1.0 {
        return None;
    }
    let entry = to_disk.arg() - 2.0 * half_sq.sqrt().asin();
    let mut sweep = (entry - start_angle).rem_euclid(TAU);
    if sweep <= 0.0 || sweep >= TAU {
        sweep = TAU;
    }
    Some(sweep)
}

/// Elastic reflection of `vel` on a wall with unit normal `normal`.
pub fn reflect(vel: PlanarVector, normal: PlanarVector) -> Result<PlanarVector> {
    check_unit(vel)?;
    check_unit(normal)?;
    Ok(reflect_unchecked(vel, normal))
}

pub(crate) fn reflect_unchecked(vel: PlanarVector, normal: PlanarVector) -> PlanarVector {
    vel - normal * (2.0 * vel.dot(normal))
}

/// Euclidean distance from `p` to the arc `a`.
pub fn min_distance_point_to_arc(p: PlanarVector, a: &ArcSegment) -> f64 {
    let rel = p - a.center;
    let d = rel.norm();
    if d == 0.0 {
        return 1.0;
    }
    if a.swept >= TAU {
        return (d - 1.0).abs();
    }
    let offset = (rel.arg() - a.start_angle).rem_euclid(TAU);
    if offset <= a.swept {
        (d - 1.0).abs()
    } else {
        p.distance(a.start_point()).min(p.distance(a.end_point()))
    }
}
