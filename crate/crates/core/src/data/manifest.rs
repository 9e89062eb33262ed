//! Line-oriented dataset manifests.
//!
//! ```text
//! kan-sam-manifest 1
//! regime thermal-informative
//! scene {"image_size":64,...}
//! id	split	rgb	thermal	gt
//! s00000	train	images/s00000_rgb.ppm	images/s00000_thermal.pgm	images/s00000_gt.pgm
//! ```
//!
//! Header lines are `key value` pairs up to the tab-separated column line;
//! every following line is one sample. Paths are relative to the manifest.

#![allow(clippy::tabs_in_doc_comments)]

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{generate_sample, pnm, Regime, RgbtSample, SceneConfig};

pub const MANIFEST_VERSION: u32 = 1;
const MAGIC: &str = "kan-sam-manifest";
const COLUMNS: &str = "id\tsplit\trgb\tthermal\tgt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::format("manifest", format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub split: Split,
    pub rgb: PathBuf,
    pub thermal: PathBuf,
    pub gt: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub regime: Option<Regime>,
    pub scene: SceneConfig,
    pub rows: Vec<ManifestRow>,
    /// Directory the row paths are relative to.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn render(&self) -> Result<String> {
        let scene = serde_json::to_string(&self.scene).map_err(|e| Error::format("manifest", e.to_string()))?;
        let mut s = format!("{MAGIC} {MANIFEST_VERSION}\n");
        if let Some(r) = self.regime {
            let _ = writeln!(s, "regime {r}");
        }
        let _ = writeln!(s, "scene {scene}");
        let _ = writeln!(s, "{COLUMNS}");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.id,
                r.split.name(),
                r.rgb.display(),
                r.thermal.display(),
                r.gt.display()
            );
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let err = |line: usize, m: String| Error::format(format!("manifest line {}", line + 1), m);
        let mut lines = text.lines().enumerate();
        let (i, first) = lines.next().ok_or_else(|| err(0, "empty manifest".into()))?;
        let version =
            first.strip_prefix(MAGIC).map(str::trim).ok_or_else(|| err(i, format!("missing {MAGIC:?} header")))?;
        if version != MANIFEST_VERSION.to_string() {
            return Err(err(i, format!("unsupported manifest version {version}")));
        }
        let mut regime = None;
        let mut scene = None;
        let mut rows = Vec::new();
        let mut in_rows = false;
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            if !in_rows {
                if line == COLUMNS {
                    in_rows = true;
                    continue;
                }
                let (key, value) = line.split_once(' ').ok_or_else(|| err(i, format!("malformed header {line:?}")))?;
                match key {
                    "regime" => regime = Some(value.parse::<Regime>().map_err(|e| err(i, e.to_string()))?),
                    "scene" => {
                        let cfg: SceneConfig = serde_json::from_str(value).map_err(|e| err(i, e.to_string()))?;
                        cfg.validate().map_err(|e| err(i, e.to_string()))?;
                        scene = Some(cfg);
                    }
                    _ => return Err(err(i, format!("unknown header key {key:?}"))),
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, split, rgb, thermal, gt] = cols[..] else {
                return Err(err(i, format!("expected 5 tab-separated columns, found {}", cols.len())));
            };
            rows.push(ManifestRow {
                id: id.to_string(),
                split: split.parse().map_err(|e: Error| err(i, e.to_string()))?,
                rgb: rgb.into(),
                thermal: thermal.into(),
                gt: gt.into(),
            });
        }
        if !in_rows {
            return Err(err(0, "missing column line".into()));
        }
        let scene = scene.ok_or_else(|| err(0, "missing scene header".into()))?;
        let mut seen = std::collections::HashSet::new();
        for r in &rows {
            if !seen.insert(&r.id) {
                return Err(Error::format("manifest", format!("duplicate id {}", r.id)));
            }
        }
        Ok(Self { regime, scene, rows, base_dir: base_dir.to_path_buf() })
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads every listed sample; errors name the offending id.
    pub fn load_samples(&self) -> Result<Vec<RgbtSample>> {
        self.rows.iter().map(|r| self.load_row(r)).collect()
    }

    fn load_row(&self, row: &ManifestRow) -> Result<RgbtSample> {
        let ctx = |e: Error| Error::format(format!("sample {}", row.id), e.to_string());
        let rgb = pnm::read_ppm(&self.base_dir.join(&row.rgb)).map_err(ctx)?;
        let thermal = pnm::read_pgm(&self.base_dir.join(&row.thermal)).map_err(ctx)?;
        let gt = pnm::read_pgm(&self.base_dir.join(&row.gt)).map_err(ctx)?;
        let n = self.scene.image_size;
        for (what, shape) in [("rgb", &rgb.shape()[..2]), ("thermal", thermal.shape()), ("gt", gt.shape())] {
            if shape != [n, n] {
                return Err(ctx(Error::dim("manifest", format!("{what} is {shape:?}, manifest declares {n}x{n}"))));
            }
        }
        let thermal = thermal.reshape(&[n, n, 1])?;
        RgbtSample::new(row.id.clone(), rgb, thermal, gt).map_err(ctx)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::parse(&text, base).map_err(|e| match e {
        Error::Format { context, detail } => {
            Error::Format { context: format!("{}: {context}", path.display()), detail }
        }
        other => other,
    })
}

/// Generates the samples with indices in `range`.
pub fn generate_split(scene: &SceneConfig, range: Range<usize>) -> Result<Vec<RgbtSample>> {
    range.map(|i| generate_sample(scene, i)).collect()
}

fn write_sample(dir: &Path, s: &RgbtSample, split: Split) -> Result<ManifestRow> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let rel = |suffix: &str| PathBuf::from("images").join(format!("{}_{suffix}", s.id));
    let row =
        ManifestRow { id: s.id.clone(), split, rgb: rel("rgb.ppm"), thermal: rel("thermal.pgm"), gt: rel("gt.pgm") };
    pnm::write_ppm(&dir.join(&row.rgb), &s.rgb)?;
    pnm::write_pgm(&dir.join(&row.thermal), &s.thermal)?;
    pnm::write_pgm(&dir.join(&row.gt), &s.gt)?;
    Ok(row)
}

/// Writes `n_train` training and `n_test` test samples (disjoint index
/// ranges) under `dir`, with `train.manifest` and `test.manifest`.
pub fn write_dataset(
    dir: &Path,
    scene: &SceneConfig,
    regime: Option<Regime>,
    n_train: usize,
    n_test: usize,
) -> Result<(Manifest, Manifest)> {
    scene.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (split, range) in [(Split::Train, 0..n_train), (Split::Test, n_train..n_train + n_test)] {
        let mut rows = Vec::new();
        for i in range {
            let s = generate_sample(scene, i)?;
            rows.push(write_sample(dir, &s, split)?);
        }
        let m = Manifest { regime, scene: scene.clone(), rows, base_dir: dir.to_path_buf() };
        m.write(&dir.join(format!("{}.manifest", split.name())))?;
        out.push(m);
    }
    let test = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, test))
}

/// Both standard regimes under `dir/<regime>/`.
pub fn make_benchmark(
    dir: &Path,
    image_size: usize,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<(Regime, Manifest, Manifest)>> {
    Regime::ALL
        .into_iter()
        .map(|r| {
            let (train, test) =
                write_dataset(&dir.join(r.name()), &r.scene(image_size, seed), Some(r), n_train, n_test)?;
            Ok((r, train, test))
        })
        .collect()
}

/// Quantizes a sample as writing and re-reading it would.
pub fn quantized(s: &RgbtSample) -> RgbtSample {
    let q = |t: &Tensor| t.map(|v| f64::from(pnm::quantize(v)) / 255.0);
    RgbtSample { id: s.id.clone(), rgb: q(&s.rgb), thermal: q(&s.thermal), gt: s.gt.clone() }
}
