use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::Rng64;

use super::SceneConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
}

/// A placed shape in pixel coordinates.
#[derive(Clone, Debug)]
pub(super) enum Shape {
    Ellipse { cx: f64, cy: f64, a: f64, b: f64, theta: f64 },
    Rectangle { cx: f64, cy: f64, hw: f64, hh: f64, theta: f64 },
    Triangle { v: [(f64, f64); 3] },
}

pub(super) fn random_shape(rng: &mut Rng64, cfg: &SceneConfig, n: usize) -> Shape {
    let nf = n as f64;
    let kind = cfg.shapes[rng.gen_range(0..cfg.shapes.len())];
    let [r0, r1] = cfg.object_radius;
    let r = rng.gen_range(r0..=r1) * nf;
    let cx = rng.gen_range(r.min(nf / 2.0)..=(nf - r).max(nf / 2.0));
    let cy = rng.gen_range(r.min(nf / 2.0)..=(nf - r).max(nf / 2.0));
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    match kind {
        ShapeKind::Ellipse => Shape::Ellipse { cx, cy, a: r, b: r * rng.gen_range(0.5..=1.0), theta },
        ShapeKind::Rectangle => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            Shape::Rectangle { cx, cy, hw: r * s, hh: r * s * rng.gen_range(0.5..=1.0), theta }
        }
        ShapeKind::Triangle => {
            let v = std::array::from_fn(|i| {
                let a = theta * 2.0 + i as f64 * std::f64::consts::TAU / 3.0 + rng.gen_range(-0.3..=0.3);
                (cx + r * a.cos(), cy + r * a.sin())
            });
            Shape::Triangle { v }
        }
    }
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, a, b, theta } => {
                let (s, c) = theta.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            }
            Shape::Rectangle { cx, cy, hw, hh, theta } => {
                let (s, c) = theta.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                (c * dx + s * dy).abs() <= hw && (-s * dx + c * dy).abs() <= hh
            }
            Shape::Triangle { v } => {
                let cross = |(ax, ay): (f64, f64), (bx, by): (f64, f64)| (bx - ax) * (y - ay) - (by - ay) * (x - ax);
                let d = [cross(v[0], v[1]), cross(v[1], v[2]), cross(v[2], v[0])];
                d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0)
            }
        }
    }

    /// Pixels whose centres fall inside the shape, row-major over an `n × n` image.
    pub fn raster(&self, n: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                out.push(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }
}
