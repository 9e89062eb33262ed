//! Synthetic RGB-thermal scenes with exact ground truth, netpbm image I/O and dataset manifests.

mod augment;
mod manifest;
mod pnm;
mod render;

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub use augment::{augment, AugmentConfig, Augmentation};
pub use manifest::{
    generate_split, load_manifest, make_benchmark, quantized, write_dataset, Manifest, ManifestRow, Split,
    MANIFEST_VERSION,
};
pub use pnm::{quantize, read_pgm, read_ppm, write_pgm, write_ppm};
pub use render::ShapeKind;

/// Bounds on the ground-truth area fraction; scenes outside are resampled.
pub const MIN_GT_FRACTION: f64 = 0.02;
pub const MAX_GT_FRACTION: f64 = 0.40;
const MAX_ATTEMPTS: usize = 1000;

/// One aligned RGB / thermal / ground-truth triple.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbtSample {
    pub id: String,
    /// `[H, W, 3]` in `[0, 1]`.
    pub rgb: Tensor,
    /// `[H, W, 1]` in `[0, 1]`.
    pub thermal: Tensor,
    /// `[H, W]` with values in `{0, 1}`.
    pub gt: Tensor,
}

impl RgbtSample {
    pub fn new(id: impl Into<String>, rgb: Tensor, thermal: Tensor, gt: Tensor) -> Result<Self> {
        let id = id.into();
        let (h, w) = match gt.shape() {
            [h, w] => (*h, *w),
            s => return Err(Error::dim("sample", format!("{id}: ground truth {s:?} is not [H, W]"))),
        };
        if rgb.shape() != [h, w, 3] || thermal.shape() != [h, w, 1] {
            return Err(Error::dim(
                "sample",
                format!("{id}: rgb {:?} / thermal {:?} not aligned with gt [{h}, {w}]", rgb.shape(), thermal.shape()),
            ));
        }
        if gt.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::format(id, "ground truth is not binary"));
        }
        Ok(Self { id, rgb, thermal, gt })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.gt.shape()[0], self.gt.shape()[1])
    }

    pub fn gt_fraction(&self) -> f64 {
        self.gt.data().iter().sum::<f64>() / self.gt.numel() as f64
    }
}

/// Standard benchmark regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Object clearly visible in both modalities.
    RgbEasy,
    /// Object nearly invisible in RGB amid strong clutter, crisp in thermal.
    ThermalInformative,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::RgbEasy, Regime::ThermalInformative];

    pub fn name(self) -> &'static str {
        match self {
            Regime::RgbEasy => "rgb-easy",
            Regime::ThermalInformative => "thermal-informative",
        }
    }

    pub fn scene(self, image_size: usize, seed: u64) -> SceneConfig {
        let base = SceneConfig { image_size, seed, ..SceneConfig::default() };
        match self {
            Regime::RgbEasy => SceneConfig {
                rgb_contrast: 0.45,
                thermal_contrast: 0.45,
                clutter_rgb_contrast: 0.15,
                clutter_thermal_contrast: 0.05,
                ..base
            },
            Regime::ThermalInformative => SceneConfig {
                rgb_contrast: 0.05,
                thermal_contrast: 0.5,
                clutter_rgb_contrast: 0.4,
                clutter_thermal_contrast: 0.05,
                ..base
            },
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}; expected rgb-easy or thermal-informative")))
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Inclusive range of objects per scene, the salient one included.
    pub object_count: [usize; 2],
    pub shapes: Vec<ShapeKind>,
    /// Inclusive range of object radii as a fraction of the image side.
    pub object_radius: [f64; 2],
    /// Euclidean norm of the salient object's RGB offset.
    pub rgb_contrast: f64,
    /// Salient object's additive thermal offset.
    pub thermal_contrast: f64,
    /// RGB offset norm of clutter objects.
    pub clutter_rgb_contrast: f64,
    /// Largest thermal offset magnitude of clutter objects.
    pub clutter_thermal_contrast: f64,
    pub noise_sigma: f64,
    pub illumination_gradient: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            object_count: [2, 5],
            shapes: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle],
            object_radius: [0.12, 0.3],
            rgb_contrast: 0.45,
            thermal_contrast: 0.45,
            clutter_rgb_contrast: 0.15,
            clutter_thermal_contrast: 0.05,
            noise_sigma: 0.03,
            illumination_gradient: true,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scene: {m}")));
        if self.image_size < 4 {
            return bad(format!("image_size {} is below 4", self.image_size));
        }
        if self.object_count[0] == 0 || self.object_count[0] > self.object_count[1] {
            return bad(format!("object_count {:?} must be a nonempty range starting at 1 or more", self.object_count));
        }
        if self.shapes.is_empty() {
            return bad("shape vocabulary is empty".into());
        }
        let [r0, r1] = self.object_radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad(format!("object_radius {:?} must be an increasing positive range", self.object_radius));
        }
        if r1 > 0.5 {
            return bad(format!("object_radius upper bound {r1} makes objects larger than the image"));
        }
        for (name, v) in [
            ("rgb_contrast", self.rgb_contrast),
            ("thermal_contrast", self.thermal_contrast),
            ("clutter_rgb_contrast", self.clutter_rgb_contrast),
            ("clutter_thermal_contrast", self.clutter_thermal_contrast),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Identifier of the sample at `index`.
pub fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Renders scene `index`; a pure function of `(cfg, index)`.
pub fn generate_sample(cfg: &SceneConfig, index: usize) -> Result<RgbtSample> {
    cfg.validate()?;
    let n = cfg.image_size;
    let mut rng = seed::rng(seed::mix(cfg.seed, &[index as u64]));
    let nf = n as f64;

    // background: base colour, thermal level, optional linear illumination ramp
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.7));
    let t_base = rng.gen_range(0.2..0.4);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let ramp_amp = if cfg.illumination_gradient { rng.gen_range(0.1..0.25) } else { 0.0 };
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut rgb = vec![0.0; n * n * 3];
    let mut thermal = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let u = ((x as f64 + 0.5) / nf - 0.5) * dx + ((y as f64 + 0.5) / nf - 0.5) * dy;
            let light = 1.0 + ramp_amp * u;
            for c in 0..3 {
                rgb[(y * n + x) * 3 + c] = base[c] * light;
            }
            thermal[y * n + x] = t_base;
        }
    }
    let background_rgb = rgb.clone();
    let background_t = thermal.clone();

    let objects = rng.gen_range(cfg.object_count[0]..=cfg.object_count[1]);
    for _ in 1..objects {
        let shape = render::random_shape(&mut rng, cfg, n);
        let mask = shape.raster(n);
        let dir = unit_vector(&mut rng);
        let t_off = rng.gen_range(-1.0..=1.0) * cfg.clutter_thermal_contrast;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for c in 0..3 {
                    rgb[i * 3 + c] = background_rgb[i * 3 + c] + cfg.clutter_rgb_contrast * dir[c];
                }
                thermal[i] = background_t[i] + t_off;
            }
        }
    }

    let mut gt_mask = None;
    for _ in 0..MAX_ATTEMPTS {
        let shape = render::random_shape(&mut rng, cfg, n);
        let mask = shape.raster(n);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (n * n) as f64;
        if (MIN_GT_FRACTION..=MAX_GT_FRACTION).contains(&frac) {
            gt_mask = Some(mask);
            break;
        }
    }
    let gt_mask = gt_mask.ok_or_else(|| {
        Error::Config(format!(
            "scene: no salient object with area in [{MIN_GT_FRACTION}, {MAX_GT_FRACTION}] after {MAX_ATTEMPTS} draws"
        ))
    })?;
    let dir = unit_vector(&mut rng);
    for (i, &m) in gt_mask.iter().enumerate() {
        if m {
            for c in 0..3 {
                rgb[i * 3 + c] = background_rgb[i * 3 + c] + cfg.rgb_contrast * dir[c];
            }
            thermal[i] = background_t[i] + cfg.thermal_contrast;
        }
    }

    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(format!("scene: {e}")))?;
        for v in rgb.iter_mut().chain(thermal.iter_mut()) {
            *v += normal.sample(&mut rng);
        }
    }
    for v in rgb.iter_mut().chain(thermal.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    let gt: Vec<f64> = gt_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    RgbtSample::new(
        sample_id(index),
        Tensor::new(&[n, n, 3], rgb)?,
        Tensor::new(&[n, n, 1], thermal)?,
        Tensor::new(&[n, n], gt)?,
    )
}

fn unit_vector(rng: &mut seed::Rng64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 0.1 && norm <= 1.0 {
            return v.map(|c| c / norm);
        }
    }
}

#[cfg(test)]
mod tests;
