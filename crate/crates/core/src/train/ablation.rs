use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RgbtSample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport, ThresholdMode};
use crate::model::{ModelConfig, SaliencyModel};

use super::{fit, TrainConfig};

/// Ablation rows: adapters (thermal path) and masking toggled independently.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Frozen trunk and tunable decoder only; thermal input unused.
    Base,
    /// Base plus input masking.
    MaskOnly,
    /// Base plus thermal-prompting adapters.
    KanOnly,
    /// Adapters and masking.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::MaskOnly, Variant::KanOnly, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::MaskOnly => "mask-only",
            Variant::KanOnly => "kan-only",
            Variant::Full => "full",
        }
    }

    pub fn uses_adapters(self) -> bool {
        matches!(self, Variant::KanOnly | Variant::Full)
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Variant::MaskOnly | Variant::Full)
    }

    /// Copies of the configs with this variant's switches applied.
    pub fn apply(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let mut m = model.clone();
        let mut t = train.clone();
        m.use_adapters = self.uses_adapters();
        t.mask.enabled = self.uses_mask();
        (m, t)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected base, mask-only, kan-only or full")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub tunable_params: usize,
    pub adapter_params: usize,
    pub test: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn rows_for(&self, v: Variant) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.variant == v)
    }

    /// Field-wise median over seeds for one variant.
    pub fn median(&self, v: Variant) -> Option<MetricsReport> {
        let reports: Vec<[f64; 6]> = self.rows_for(v).map(|r| r.test.values()).collect();
        if reports.is_empty() {
            return None;
        }
        let med = |k: usize| {
            let mut xs: Vec<f64> = reports.iter().map(|r| r[k]).collect();
            xs.sort_by(f64::total_cmp);
            let n = xs.len();
            if n % 2 == 1 {
                xs[n / 2]
            } else {
                0.5 * (xs[n / 2 - 1] + xs[n / 2])
            }
        };
        Some(MetricsReport { f_avg: med(0), f_max: med(1), f_w: med(2), mae: med(3), e_m: med(4), s_m: med(5) })
    }

    /// One line per variant with the six median metrics.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10}", "variant");
        for f in MetricsReport::FIELDS {
            out.push_str(&format!(" {f:>8}"));
        }
        out.push('\n');
        for v in Variant::ALL {
            if let Some(m) = self.median(v) {
                out.push_str(&format!("{:<10}", v.name()));
                for x in m.values() {
                    out.push_str(&format!(" {x:>8.4}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Trains every variant for every seed and evaluates the final model on `test`.
pub fn ablation_suite(train: &[RgbtSample], test: &[RgbtSample], cfg: &AblationConfig) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &variant in &cfg.variants {
            let (mc, mut tc) = variant.apply(&cfg.model, &cfg.train);
            tc.seed = seed;
            let mut model = SaliencyModel::new(mc, seed)?;
            fit(&mut model, train, test, &tc, |_| {})?;
            let report = evaluate(&model, test, ThresholdMode::Sweep, tc.threads)?;
            let adapter_params = model.store().scalar_count_prefixed("adapter");
            let tunable_params = model.store().scalar_count_in(crate::params::Partition::Tunable);
            rows.push(AblationRow { variant, seed, tunable_params, adapter_params, test: report.mean });
        }
    }
    Ok(AblationReport { rows })
}
