//! Poisson field of disk scatterers over the whole plane, generated one
//! square cell at a time on first use.
//!
//! Every cell draws from its own substream keyed by (seed, trajectory, cell),
//! so the field is the same whatever order the cells are visited in.

use std::collections::HashMap;

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::PlanarVector;
use crate::randomness::{mix_seed, RandomStream, UniformSource};

const CELL_TAG: u64 = 0x6365_6c6c;

#[derive(Clone, Debug)]
pub struct ScattererField {
    rho: f64,
    eps: f64,
    cell_size: f64,
    seed: u64,
    cells: HashMap<(i64, i64), Vec<PlanarVector>>,
    /// Balls that must stay free of centers (conditioning on a free start).
    voids: Vec<(PlanarVector, f64)>,
    /// A fixed field never generates: missing cells are empty.
    fixed: bool,
}

impl ScattererField {
    /// Fresh annealed field for trajectory `trajectory` of an experiment
    /// seeded by `seed`.
    pub fn new(rho: f64, eps: f64, seed: u64, trajectory: u64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("intensity must be finite and nonnegative, got {rho}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::EpsOutOfRange { eps, range: "(0, 1)" });
        }
        Ok(Self {
            rho,
            eps,
            cell_size: (4.0 * eps).max(1.0),
            seed: mix_seed(seed, trajectory),
            cells: HashMap::new(),
            voids: Vec::new(),
            fixed: false,
        })
    }

    /// Field holding exactly the given centers.
    pub fn from_centers(eps: f64, centers: &[PlanarVector]) -> Result<Self> {
        let mut field = Self::new(0.0, eps, 0, 0)?;
        field.fixed = true;
        for &c in centers {
            let key = field.cell_of(c);
            field.cells.entry(key).or_default().push(c);
        }
        Ok(field)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn cell_of(&self, p: PlanarVector) -> (i64, i64) {
        ((p.x / self.cell_size).floor() as i64, (p.y / self.cell_size).floor() as i64)
    }

    fn generate(&self, key: (i64, i64)) -> Vec<PlanarVector> {
        if self.fixed || self.rho == 0.0 {
            return Vec::new();
        }
        let index = ((key.0 as i32 as u32 as u64) << 32) | key.1 as i32 as u32 as u64;
        let mut s = RandomStream::new(self.seed, 0).child(CELL_TAG, index);
        let area = self.cell_size * self.cell_size;
        let count = Poisson::new(self.rho * area)
            .map(|p| p.sample(&mut s) as usize)
            .unwrap_or(0);
        let (x0, y0) = (key.0 as f64 * self.cell_size, key.1 as f64 * self.cell_size);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let x = x0 + self.cell_size * s.next_uniform();
            let y = y0 + self.cell_size * s.next_uniform();
            out.push(PlanarVector::new(x, y));
        }
        out.retain(|c| self.voids.iter().all(|(o, r)| c.distance(*o) >= *r));
        out
    }

    /// Centers in cell `key`, generated on first access.
    pub fn cell(&mut self, key: (i64, i64)) -> &[PlanarVector] {
        if !self.cells.contains_key(&key) {
            let fresh = self.generate(key);
            self.cells.insert(key, fresh);
        }
        &self.cells[&key]
    }

    /// All centers within `radius` of `p`.
    pub fn scatterers_near(&mut self, p: PlanarVector, radius: f64) -> Vec<PlanarVector> {
        let mut out = Vec::new();
        self.for_each_near(p, radius, |c| out.push(c));
        out
    }

    pub(crate) fn for_each_near(&mut self, p: PlanarVector, radius: f64, mut f: impl FnMut(PlanarVector)) {
        let cs = self.cell_size;
        let (i0, i1) = (((p.x - radius) / cs).floor() as i64, ((p.x + radius) / cs).floor() as i64);
        let (j0, j1) = (((p.y - radius) / cs).floor() as i64, ((p.y + radius) / cs).floor() as i64);
        let r2 = radius * radius;
        for i in i0..=i1 {
            for j in j0..=j1 {
                for &c in self.cell((i, j)) {
                    if (c - p).norm_sq() <= r2 {
                        f(c);
                    }
                }
            }
        }
    }

    /// True iff no scatterer covers `p`.
    pub fn is_free(&mut self, p: PlanarVector) -> bool {
        let eps = self.eps;
        let mut free = true;
        self.for_each_near(p, eps, |c| {
            if c.distance(p) < eps {
                free = false;
            }
        });
        free
    }

    /// Conditions the field on `origin` being uncovered. For a Poisson
    /// process this is restriction to the complement of the ε-ball.
    pub fn condition_start_free(&mut self, origin: PlanarVector) {
        let r = self.eps;
        self.voids.push((origin, r));
        for centers in self.cells.values_mut() {
            centers.retain(|c| c.distance(origin) >= r);
        }
    }

    /// Every generated center with its cell, sorted by cell.
    pub fn generated(&self) -> Vec<((i64, i64), PlanarVector)> {
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter()
            .flat_map(|k| self.cells[&k].iter().map(move |&c| (k, c)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn empty_field() {
        let mut f = ScattererField::new(0.0, 0.1, 1, 0).unwrap();
        assert!(f.scatterers_near(PlanarVector::ZERO, 10.0).is_empty());
        assert!(f.is_free(PlanarVector::new(3.0, 4.0)));
        assert!(ScattererField::new(-1.0, 0.1, 1, 0).is_err());
        assert!(ScattererField::new(1.0, 0.0, 1, 0).is_err());
    }

    #[test]
    fn center_is_not_free() {
        let mut f = ScattererField::new(5.0, 0.1, 2, 0).unwrap();
        let c = f.scatterers_near(PlanarVector::ZERO, 3.0)[0];
        assert!(!f.is_free(c));
    }

    #[test]
    fn count_mean_and_dispersion() {
        let (rho, r) = (3.0, 1.3);
        let area = PI * r * r;
        let n = 10_000;
        let counts: Vec<f64> = (0..n)
            .map(|k| {
                let mut f = ScattererField::new(rho, 0.05, 3, k).unwrap();
                f.scatterers_near(PlanarVector::new(0.4, -0.2), r).len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - rho * area).abs() < 3.0 * (rho * area / n as f64).sqrt());
        assert!((var / mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn void_probability() {
        let (rho, eps) = (20.0, 0.15);
        let n = 20_000;
        let free = (0..n)
            .filter(|&k| ScattererField::new(rho, eps, 4, k).unwrap().is_free(PlanarVector::new(0.3, 0.7)))
            .count() as f64
            / n as f64;
        let p = (-rho * PI * eps * eps).exp();
        assert!((free - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    }

    #[test]
    fn conditioning_clears_origin_only() {
        let (rho, eps) = (40.0, 0.2);
        let n = 4_000;
        let mut annulus = 0usize;
        for k in 0..n {
            let mut f = ScattererField::new(rho, eps, 5, k).unwrap();
            f.condition_start_free(PlanarVector::ZERO);
            assert!(f.is_free(PlanarVector::ZERO));
            annulus += f
                .scatterers_near(PlanarVector::ZERO, 1.0)
                .iter()
                .filter(|c| c.norm() >= 0.5)
                .count();
        }
        let expected = rho * PI * (1.0 - 0.25);
        let mean = annulus as f64 / n as f64;
        assert!((mean - expected).abs() < 3.0 * (expected / n as f64).sqrt());
    }

    #[test]
    fn conditioning_before_or_after_generation_agree() {
        let mut a = ScattererField::new(30.0, 0.2, 6, 1).unwrap();
        a.condition_start_free(PlanarVector::ZERO);
        let ca = a.scatterers_near(PlanarVector::ZERO, 2.0);
        let mut b = ScattererField::new(30.0, 0.2, 6, 1).unwrap();
        let _ = b.scatterers_near(PlanarVector::ZERO, 2.0);
        b.condition_start_free(PlanarVector::ZERO);
        assert_eq!(ca, b.scatterers_near(PlanarVector::ZERO, 2.0));
    }

    #[test]
    fn query_order_invariance() {
        let queries = [(0.0, 0.0), (5.0, -3.0), (-7.5, 2.0), (1.0, 9.0)];
        let mut a = ScattererField::new(4.0, 0.1, 7, 2).unwrap();
        let mut b = ScattererField::new(4.0, 0.1, 7, 2).unwrap();
        for &(x, y) in &queries {
            a.scatterers_near(PlanarVector::new(x, y), 2.0);
        }
        for &(x, y) in queries.iter().rev() {
            b.scatterers_near(PlanarVector::new(x, y), 2.0);
        }
        assert_eq!(a.generated(), b.generated());
    }

    #[test]
    fn disjoint_cells_uncorrelated() {
        // 10^5 fields so that 0.01 is about three standard errors of r
        let n = 100_000;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for k in 0..n {
            let mut f = ScattererField::new(2.0, 0.1, 8, k).unwrap();
            xs.push(f.cell((0, 0)).len() as f64);
            ys.push(f.cell((1, 0)).len() as f64);
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        assert!((cov / (vx * vy).sqrt()).abs() < 0.01);
    }

    #[test]
    fn fixed_field_holds_given_centers() {
        let cs = [PlanarVector::new(1.0, 1.0), PlanarVector::new(-3.0, 0.5)];
        let mut f = ScattererField::from_centers(0.1, &cs).unwrap();
        assert_eq!(f.scatterers_near(PlanarVector::ZERO, 10.0).len(), 2);
        assert!(!f.is_free(PlanarVector::new(1.05, 1.0)));
    }
}
