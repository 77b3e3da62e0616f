//! Uniform-grid hashes for proximity queries against trajectory arcs and
//! collision points.

use std::collections::HashMap;

use crate::geometry::{min_distance_point_to_arc, ArcSegment, PlanarVector};

fn cell_key(p: PlanarVector, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

/// Arcs registered in every cell hit by a sample taken at most a quarter
/// cell apart along the arc.
///
/// Any arc point within `r` of a query point has a sample within
/// `r + size/8`, so scanning the cells that meet the square of half-width
/// `r + size/8` around the query is exhaustive.
#[derive(Clone, Debug)]
pub struct TrajectoryIndex {
    size: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    arcs: Vec<ArcSegment>,
}

impl TrajectoryIndex {
    pub fn new(cell_size: f64) -> Self {
        Self {
            size: cell_size,
            cells: HashMap::new(),
            arcs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn arc(&self, id: usize) -> &ArcSegment {
        &self.arcs[id]
    }

    /// Adds an arc and returns its id (ids are consecutive from 0).
    pub fn insert(&mut self, arc: ArcSegment) -> usize {
        let id = self.arcs.len();
        let step = 0.25 * self.size;
        let n = ((arc.swept / step).ceil() as usize).max(1);
        let mut last = None;
        for k in 0..=n {
            let key = cell_key(arc.point_at_sweep(arc.swept * k as f64 / n as f64), self.size);
            if last != Some(key) {
                let list = self.cells.entry(key).or_default();
                if list.last() != Some(&id) {
                    list.push(id);
                }
                last = Some(key);
            }
        }
        self.arcs.push(arc);
        id
    }

    /// Ids of arcs that may pass within `r` of `p`, sorted and unique.
    pub fn candidates(&self, p: PlanarVector, r: f64) -> Vec<usize> {
        let reach = r + 0.125 * self.size;
        let (i0, j0) = cell_key(p - PlanarVector::new(reach, reach), self.size);
        let (i1, j1) = cell_key(p + PlanarVector::new(reach, reach), self.size);
        let mut out = Vec::new();
        for i in i0..=i1 {
            for j in j0..=j1 {
                if let Some(list) = self.cells.get(&(i, j)) {
                    out.extend_from_slice(list);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Smallest exact distance from `p` to an indexed arc, if one lies
    /// within `r`.
    pub fn nearest_within(&self, p: PlanarVector, r: f64) -> Option<(usize, f64)> {
        self.candidates(p, r)
            .into_iter()
            .map(|id| (id, min_distance_point_to_arc(p, &self.arcs[id])))
            .filter(|&(_, d)| d < r)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// All arcs within `r` of `p`.
    pub fn query(&self, p: PlanarVector, r: f64) -> Vec<usize> {
        self.candidates(p, r)
            .into_iter()
            .filter(|&id| min_distance_point_to_arc(p, &self.arcs[id]) < r)
            .collect()
    }
}

/// Points hashed by cell, each with a caller-chosen label.
#[derive(Clone, Debug)]
pub struct PointIndex {
    size: f64,
    cells: HashMap<(i64, i64), Vec<(usize, PlanarVector)>>,
}

impl PointIndex {
    pub fn new(cell_size: f64) -> Self {
        Self {
            size: cell_size,
            cells: HashMap::new(),
        }
    }

    pub fn insert(&mut self, label: usize, p: PlanarVector) {
        self.cells.entry(cell_key(p, self.size)).or_default().push((label, p));
    }

    /// Labels of points within `r` of the arc.
    pub fn near_arc(&self, arc: &ArcSegment, r: f64) -> Vec<usize> {
        let step = 0.25 * self.size;
        let n = ((arc.swept / step).ceil() as usize).max(1);
        let reach = r + 0.125 * self.size;
        let mut keys = Vec::new();
        for k in 0..=n {
            let p = arc.point_at_sweep(arc.swept * k as f64 / n as f64);
            let (i0, j0) = cell_key(p - PlanarVector::new(reach, reach), self.size);
            let (i1, j1) = cell_key(p + PlanarVector::new(reach, reach), self.size);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    keys.push((i, j));
                }
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let mut out: Vec<usize> = keys
            .iter()
            .filter_map(|k| self.cells.get(k))
            .flatten()
            .filter(|(_, q)| min_distance_point_to_arc(*q, arc) < r)
            .map(|&(label, _)| label)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
