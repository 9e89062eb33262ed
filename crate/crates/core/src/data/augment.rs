//! Geometric augmentation applied identically to RGB, thermal and ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::tensor::Tensor;

use super::RgbtSample;

/// Smallest crop side as a fraction of the image.
pub const MIN_CROP_SCALE: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Horizontal flip with probability 1/2.
    pub flip: bool,
    /// Rotation by a uniformly chosen multiple of 90 degrees.
    pub rotate: bool,
    /// Square crop of side `s·H`, `s ∈ [0.8, 1]`, resized back by nearest neighbour.
    pub crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, rotate: true, crop: true }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { flip: false, rotate: false, crop: false }
    }

    pub fn any(&self) -> bool {
        self.flip || self.rotate || self.crop
    }
}

/// A sampled transform: crop, then rotate, then flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub crop: Option<(usize, usize, usize)>,
    pub quarter_turns: usize,
    pub flip: bool,
}

impl Augmentation {
    pub fn sample(cfg: &AugmentConfig, size: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let crop = if cfg.crop {
            let side = ((rng.gen_range(MIN_CROP_SCALE..=1.0) * size as f64).round() as usize).clamp(1, size);
            let y0 = rng.gen_range(0..=size - side);
            let x0 = rng.gen_range(0..=size - side);
            Some((y0, x0, side))
        } else {
            None
        };
        let quarter_turns = if cfg.rotate { rng.gen_range(0..4) } else { 0 };
        let flip = cfg.flip && rng.gen_bool(0.5);
        Self { crop, quarter_turns, flip }
    }

    /// Source pixel `(y, x)` for output pixel `(oy, ox)` of an `n × n` image.
    fn source(&self, n: usize, oy: usize, ox: usize) -> (usize, usize) {
        let ox = if self.flip { n - 1 - ox } else { ox };
        // undo the counter-clockwise quarter turns
        let (mut y, mut x) = (oy, ox);
        for _ in 0..self.quarter_turns {
            (y, x) = (x, n - 1 - y);
        }
        match self.crop {
            Some((y0, x0, side)) => (y0 + y * side / n, x0 + x * side / n),
            None => (y, x),
        }
    }

    /// Applies to a square `[N, N]` or `[N, N, C]` tensor.
    pub fn apply(&self, t: &Tensor) -> Tensor {
        let shape = t.shape();
        let n = shape[0];
        assert_eq!(shape[1], n, "augmentation needs square images");
        let c = shape.get(2).copied().unwrap_or(1);
        let src = t.data();
        Tensor::from_fn(shape, |i| {
            let (pix, ch) = (i / c, i % c);
            let (y, x) = self.source(n, pix / n, pix % n);
            src[(y * n + x) * c + ch]
        })
    }
}

pub fn augment(sample: &RgbtSample, cfg: &AugmentConfig, seed: u64) -> RgbtSample {
    if !cfg.any() {
        return sample.clone();
    }
    let a = Augmentation::sample(cfg, sample.size().0, seed);
    RgbtSample {
        id: sample.id.clone(),
        rgb: a.apply(&sample.rgb),
        thermal: a.apply(&sample.thermal),
        gt: a.apply(&sample.gt),
    }
}
