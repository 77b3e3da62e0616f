//! Trajectory figures: arcs coloured by segment, scatterers as circles.

use std::f64::consts::PI;
use std::fmt::Write as _;

use maglorentz::{ArcSegment, PlanarVector};
use serde::{Deserialize, Serialize};

/// What `plot` reads and the trajectory commands write.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub eps: f64,
    pub arcs: Vec<ArcSegment>,
    /// Segment index of each arc (flight number), used for colouring.
    pub segment: Vec<usize>,
    pub scatterers: Vec<PlanarVector>,
}

fn bounds(scene: &Scene) -> (f64, f64, f64, f64) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: PlanarVector, r: f64| {
        x0 = x0.min(p.x - r);
        y0 = y0.min(p.y - r);
        x1 = x1.max(p.x + r);
        y1 = y1.max(p.y + r);
    };
    for a in &scene.arcs {
        let n = ((a.swept.min(2.0 * PI) / 0.1).ceil() as usize).max(1);
        for k in 0..=n {
            grow(a.point_at_sweep(a.swept.min(2.0 * PI) * k as f64 / n as f64), 0.0);
        }
    }
    for &c in &scene.scatterers {
        grow(c, scene.eps);
    }
    if !x0.is_finite() {
        return (-1.0, -1.0, 1.0, 1.0);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0).max(1e-3);
    (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
}

fn colour(k: usize, n: usize) -> String {
    let hue = 300.0 * k as f64 / n.max(1) as f64;
    format!("hsl({hue:.0},70%,40%)")
}

/// SVG document (without XML declaration). The y axis points up.
pub fn render(scene: &Scene) -> String {
    let (x0, y0, x1, y1) = bounds(scene);
    let (w, h) = (x1 - x0, y1 - y0);
    let stroke = 0.002 * w.max(h);
    let n_seg = scene.segment.iter().copied().max().unwrap_or(0) + 1;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{x0} {} {w} {h}\" width=\"800\" height=\"{:.0}\">",
        -y1,
        800.0 * h / w
    );
    let _ = writeln!(out, "<g transform=\"scale(1,-1)\" fill=\"none\" stroke-width=\"{stroke}\">");
    for &c in &scene.scatterers {
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#999\" stroke=\"none\"/>",
            c.x, c.y, scene.eps
        );
    }
    for (i, a) in scene.arcs.iter().enumerate() {
        let col = colour(scene.segment.get(i).copied().unwrap_or(0), n_seg);
        // SVG arcs cannot close a circle, so draw in pieces of at most π/2
        let pieces = ((a.swept / (0.5 * PI)).ceil() as usize).max(1);
        let step = a.swept / pieces as f64;
        let start = a.start_point();
        let mut d = format!("M {} {}", start.x, start.y);
        for k in 1..=pieces {
            let p = a.point_at_sweep(step * k as f64);
            let _ = write!(d, " A 1 1 0 0 1 {} {}", p.x, p.y);
        }
        let _ = writeln!(out, "<path d=\"{d}\" stroke=\"{col}\"/>");
    }
    out.push_str("</g>\n</svg>\n");
    out
}
