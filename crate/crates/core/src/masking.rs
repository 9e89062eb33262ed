//! Mutually exclusive random masking of RGB-thermal input pairs.
//!
//! A masked pixel is blanked in exactly one modality. The pattern is a
//! three-way label per pixel, so a pixel cannot be masked in both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskLabel {
    Unmasked,
    MaskRgb,
    MaskThermal,
}

/// How `p_mask` is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// A pixel is masked with probability `p`, then assigned a modality
    /// uniformly (`p/2` each).
    #[default]
    PerPair,
    /// Each modality is masked with probability `p` on disjoint supports;
    /// needs `p <= 0.5`.
    PerModality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub p_mask: f64,
    pub fill_value: f64,
    pub enabled: bool,
    pub mode: MaskMode,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { p_mask: 0.10, fill_value: 0.0, enabled: true, mode: MaskMode::PerPair }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config(format!("mask probability {} outside [0, 1]", self.p_mask)));
        }
        if self.mode == MaskMode::PerModality && self.p_mask > 0.5 {
            return Err(Error::Config(format!("per-modality masking needs p_mask <= 0.5, got {}", self.p_mask)));
        }
        if !self.fill_value.is_finite() {
            return Err(Error::Config("mask fill value must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPattern {
    height: usize,
    width: usize,
    labels: Vec<MaskLabel>,
}

impl MaskPattern {
    pub fn unmasked(height: usize, width: usize) -> Self {
        MaskPattern { height, width, labels: vec![MaskLabel::Unmasked; height * width] }
    }

    pub fn from_labels(height: usize, width: usize, labels: Vec<MaskLabel>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dim("mask_pattern", format!("{} labels for {height}x{width}", labels.len())));
        }
        Ok(MaskPattern { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[MaskLabel] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> MaskLabel {
        self.labels[row * self.width + col]
    }

    pub fn count(&self, label: MaskLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Draws a pattern; fully determined by `seed`.
pub fn sample_mask(height: usize, width: usize, cfg: &MaskConfig, seed: u64) -> MaskPattern {
    let mut rng = seed::rng(seed);
    let p = cfg.p_mask;
    let labels = (0..height * width)
        .map(|_| match cfg.mode {
            MaskMode::PerPair => {
                if rng.gen::<f64>() < p {
                    if rng.gen::<bool>() {
                        MaskLabel::MaskRgb
                    } else {
                        MaskLabel::MaskThermal
                    }
                } else {
                    MaskLabel::Unmasked
                }
            }
            MaskMode::PerModality => {
                let u = rng.gen::<f64>();
                if u < p {
                    MaskLabel::MaskRgb
                } else if u < 2.0 * p {
                    MaskLabel::MaskThermal
                } else {
                    MaskLabel::Unmasked
                }
            }
        })
        .collect();
    MaskPattern { height, width, labels }
}

/// Blanks RGB pixels labelled `MaskRgb` and thermal pixels labelled
/// `MaskThermal` with `cfg.fill_value`. Images are `[H, W, C]`.
pub fn apply_mask(rgb: &Tensor, thermal: &Tensor, pattern: &MaskPattern, cfg: &MaskConfig) -> Result<(Tensor, Tensor)> {
    for (name, img) in [("rgb", rgb), ("thermal", thermal)] {
        let s = img.shape();
        if s.len() != 3 || s[0] != pattern.height || s[1] != pattern.width {
            return Err(Error::dim(
                "apply_mask",
                format!("{name} image {s:?} against {}x{} pattern", pattern.height, pattern.width),
            ));
        }
    }
    let blank = |img: &Tensor, target: MaskLabel| {
        let c = img.shape()[2];
        let mut out = img.clone();
        for (px, &label) in out.data_mut().chunks_mut(c).zip(&pattern.labels) {
            if label == target {
                px.fill(cfg.fill_value);
            }
        }
        out
    };
    Ok((blank(rgb, MaskLabel::MaskRgb), blank(thermal, MaskLabel::MaskThermal)))
}
