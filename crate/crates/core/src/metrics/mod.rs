//! Salient-object-detection metric suite: MAE, F-measure, weighted F, S-measure, E-measure.

mod edt;

use serde::{Deserialize, Serialize};

use crate::data::RgbtSample;
use crate::error::{Error, Result};
use crate::model::SaliencyModel;
use crate::tensor::Tensor;

/// β² for the threshold-swept F-measure.
pub const F_BETA_SQ: f64 = 0.3;
/// Number of binarization thresholds in the sweeps.
pub const THRESHOLDS: usize = 256;

const EPS: f64 = f64::EPSILON;

/// How F_avg and E_m binarize the prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Average over the 256-threshold sweep.
    #[default]
    Sweep,
    /// Single threshold at `min(2·mean(pred), 1)`.
    Adaptive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f_avg: f64,
    pub f_max: f64,
    pub f_w: f64,
    pub mae: f64,
    pub e_m: f64,
    pub s_m: f64,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 6] = ["f_avg", "f_max", "f_w", "mae", "e_m", "s_m"];

    pub fn values(&self) -> [f64; 6] {
        [self.f_avg, self.f_max, self.f_w, self.mae, self.e_m, self.s_m]
    }

    fn from_values(v: [f64; 6]) -> Self {
        Self { f_avg: v[0], f_max: v[1], f_w: v[2], mae: v[3], e_m: v[4], s_m: v[5] }
    }

    /// Field-wise mean in input order; `None` for an empty slice.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let n = reports.len() as f64;
        Some(Self::from_values(acc.map(|a| a / n)))
    }
}

/// Weighted F-measure together with the empty-ground-truth flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedF {
    pub score: f64,
    pub gt_empty: bool,
}

/// Borrowed prediction / binary ground-truth pair of equal `[H, W]` shape.
#[derive(Clone, Copy, Debug)]
pub struct Pair<'a> {
    pub h: usize,
    pub w: usize,
    pub pred: &'a [f64],
    pub gt: &'a [f64],
}

impl<'a> Pair<'a> {
    pub fn new(pred: &'a Tensor, gt: &'a Tensor) -> Result<Self> {
        let shape = pred.shape();
        if shape.len() != 2 || gt.shape() != shape {
            return Err(Error::dim(
                "metrics",
                format!("prediction {:?} and ground truth {:?} must be equal [H, W]", shape, gt.shape()),
            ));
        }
        Ok(Self { h: shape[0], w: shape[1], pred: pred.data(), gt: gt.data() })
    }

    fn n(&self) -> usize {
        self.h * self.w
    }

    fn is_fg(&self, i: usize) -> bool {
        self.gt[i] > 0.5
    }

    fn fg_count(&self) -> usize {
        (0..self.n()).filter(|&i| self.is_fg(i)).count()
    }
}

pub fn mae(p: Pair) -> f64 {
    p.pred.iter().zip(p.gt).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.n() as f64
}

/// Threshold value for sweep index `i`: `i / 255`.
pub fn sweep_threshold(i: usize) -> f64 {
    i as f64 / (THRESHOLDS - 1) as f64
}

pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    let mean = pred.iter().sum::<f64>() / pred.len() as f64;
    (2.0 * mean).min(1.0)
}

/// Largest sweep index whose threshold does not exceed `v`, or `None` if `v < 0`.
fn sweep_bin(v: f64) -> Option<usize> {
    if !(v >= 0.0) {
        return None;
    }
    let mut i = ((v * (THRESHOLDS - 1) as f64).floor() as usize).min(THRESHOLDS - 1);
    while i > 0 && sweep_threshold(i) > v {
        i -= 1;
    }
    while i + 1 < THRESHOLDS && sweep_threshold(i + 1) <= v {
        i += 1;
    }
    Some(i)
}

/// Per-threshold counts of predicted-positive pixels and true positives.
struct SweepCounts {
    predicted: [usize; THRESHOLDS],
    true_pos: [usize; THRESHOLDS],
}

fn sweep_counts(p: Pair) -> SweepCounts {
    let mut hist_all = [0usize; THRESHOLDS];
    let mut hist_fg = [0usize; THRESHOLDS];
    for i in 0..p.n() {
        if let Some(b) = sweep_bin(p.pred[i]) {
            hist_all[b] += 1;
            if p.is_fg(i) {
                hist_fg[b] += 1;
            }
        }
    }
    let mut predicted = [0usize; THRESHOLDS];
    let mut true_pos = [0usize; THRESHOLDS];
    let (mut a, mut f) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        a += hist_all[t];
        f += hist_fg[t];
        predicted[t] = a;
        true_pos[t] = f;
    }
    SweepCounts { predicted, true_pos }
}

/// F_β from confusion counts; 0 when precision or recall is undefined.
pub fn f_beta(true_pos: usize, predicted: usize, actual: usize) -> f64 {
    if predicted == 0 || actual == 0 {
        return 0.0;
    }
    let precision = true_pos as f64 / predicted as f64;
    let recall = true_pos as f64 / actual as f64;
    let den = F_BETA_SQ * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + F_BETA_SQ) * precision * recall / den
    }
}

/// `(f_avg, f_max)` over the threshold sweep.
pub fn f_measures(p: Pair) -> (f64, f64) {
    let c = sweep_counts(p);
    let actual = p.fg_count();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for t in 0..THRESHOLDS {
        let f = f_beta(c.true_pos[t], c.predicted[t], actual);
        sum += f;
        max = max.max(f);
    }
    (sum / THRESHOLDS as f64, max)
}

pub fn f_measure_at(p: Pair, threshold: f64) -> f64 {
    let mut tp = 0;
    let mut predicted = 0;
    for i in 0..p.n() {
        if p.pred[i] >= threshold {
            predicted += 1;
            if p.is_fg(i) {
                tp += 1;
            }
        }
    }
    f_beta(tp, predicted, p.fg_count())
}

pub fn f_measure_adaptive(p: Pair) -> f64 {
    f_measure_at(p, adaptive_threshold(p.pred))
}

/// Side length of the dependency kernel.
pub const WF_KERNEL: usize = 7;
/// Standard deviation of the dependency kernel.
pub const WF_SIGMA: f64 = 5.0;

fn gaussian_1d() -> [f64; WF_KERNEL] {
    let r = (WF_KERNEL / 2) as f64;
    let mut k = [0.0; WF_KERNEL];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * WF_SIGMA * WF_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Edge-replicating separable Gaussian filtering of an `[h, w]` map.
fn gaussian_filter(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_1d();
    let r = (WF_KERNEL / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sx = (xx as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * x[y * w + sx];
            }
            rows[y * w + xx] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * rows[sy * w + xx];
            }
            out[y * w + xx] = acc;
        }
    }
    out
}

/// Weighted F-measure (β² = 1).
pub fn weighted_f(p: Pair) -> WeightedF {
    let n = p.n();
    let fg: Vec<bool> = (0..n).map(|i| p.is_fg(i)).collect();
    if !fg.iter().any(|&f| f) {
        return WeightedF { score: 0.0, gt_empty: true };
    }
    let err: Vec<f64> = (0..n).map(|i| (p.pred[i] - p.gt[i]).abs()).collect();
    let nearest = edt::nearest_foreground(&fg, p.h, p.w);

    // background errors are replaced by the (tie-averaged) error at the nearest foreground pixel
    let et: Vec<f64> = (0..n).map(|i| if fg[i] { err[i] } else { nearest[i].mean_of(&err) }).collect();
    let ea = gaussian_filter(&et, p.h, p.w);
    let decay = 0.5f64.ln() / 5.0;

    let (mut fg_sum, mut bg_sum) = (0.0, 0.0);
    let mut fg_n = 0usize;
    for i in 0..n {
        if fg[i] {
            let e = if ea[i] < err[i] { ea[i] } else { err[i] };
            fg_sum += e;
            fg_n += 1;
        } else {
            let b = 2.0 - (decay * nearest[i].dist_sq.sqrt()).exp();
            bg_sum += err[i] * b;
        }
    }
    let tp = fg_n as f64 - fg_sum;
    let recall = 1.0 - fg_sum / fg_n as f64;
    let precision = tp / (tp + bg_sum + EPS);
    let score = 2.0 * recall * precision / (recall + precision + EPS);
    WeightedF { score, gt_empty: false }
}

/// Structure weight α.
pub const S_ALPHA: f64 = 0.5;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn s_object_term(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    let s = sample_std(v, m);
    2.0 * m / (m * m + 1.0 + s + EPS)
}

/// SSIM-style similarity of one block; empty blocks score 0.
fn block_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let x = mean(pred);
    let y = mean(gt);
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    if n > 1 {
        for i in 0..n {
            let dx = pred[i] - x;
            let dy = gt[i] - y;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
        let d = (n - 1) as f64;
        sx /= d;
        sy /= d;
        sxy /= d;
    }
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Block boundaries for a foreground centroid `sum / count` measured at pixel centres.
///
/// A centroid exactly midway between two boundaries yields both, and the region term averages them.
fn split_candidates(sum: usize, count: usize) -> Vec<usize> {
    let num = 2 * sum + count;
    let den = 2 * count;
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => vec![q],
        std::cmp::Ordering::Greater => vec![q + 1],
        std::cmp::Ordering::Equal => vec![q, q + 1],
    }
}

fn region_term(p: Pair, sy: usize, sx: usize) -> f64 {
    let n = p.n();
    let mut region = 0.0;
    for (y0, y1) in [(0, sy), (sy, p.h)] {
        for (x0, x1) in [(0, sx), (sx, p.w)] {
            let cells = (y1 - y0) * (x1 - x0);
            if cells == 0 {
                continue;
            }
            let mut bp = Vec::with_capacity(cells);
            let mut bg = Vec::with_capacity(cells);
            for y in y0..y1 {
                for x in x0..x1 {
                    bp.push(p.pred[y * p.w + x]);
                    bg.push(p.gt[y * p.w + x]);
                }
            }
            region += cells as f64 / n as f64 * block_ssim(&bp, &bg);
        }
    }
    region
}

pub fn s_measure(p: Pair) -> f64 {
    let n = p.n();
    let fg_n = p.fg_count();
    if fg_n == 0 {
        return 1.0 - mean(p.pred);
    }
    if fg_n == n {
        return mean(p.pred);
    }
    let mut fg_vals = Vec::with_capacity(fg_n);
    let mut bg_vals = Vec::with_capacity(n - fg_n);
    let (mut cy, mut cx) = (0usize, 0usize);
    for y in 0..p.h {
        for x in 0..p.w {
            let i = y * p.w + x;
            if p.is_fg(i) {
                fg_vals.push(p.pred[i]);
                cy += y;
                cx += x;
            } else {
                bg_vals.push(1.0 - p.pred[i]);
            }
        }
    }
    let u = fg_n as f64 / n as f64;
    let object = u * s_object_term(&fg_vals) + (1.0 - u) * s_object_term(&bg_vals);

    let ys = split_candidates(cy, fg_n);
    let xs = split_candidates(cx, fg_n);
    let mut region = 0.0;
    for &sy in &ys {
        for &sx in &xs {
            region += region_term(p, sy, sx);
        }
    }
    let region = region / (ys.len() * xs.len()) as f64;
    (S_ALPHA * object + (1.0 - S_ALPHA) * region).max(0.0)
}

/// Threshold value for E-measure sweep index `i`: bin centre `(i + 0.5) / 256`.
pub fn e_threshold(i: usize) -> f64 {
    (i as f64 + 0.5) / THRESHOLDS as f64
}

/// Enhanced alignment of a binarized prediction given confusion counts.
fn enhanced_alignment(tp: usize, fp: usize, fg_n: usize, n: usize) -> f64 {
    let fm_n = tp + fp;
    let nf = n as f64;
    if fg_n == 0 {
        return 1.0 - fm_n as f64 / nf;
    }
    if fg_n == n {
        return fm_n as f64 / nf;
    }
    let mu_fm = fm_n as f64 / nf;
    let mu_gt = fg_n as f64 / nf;
    let fn_ = fg_n - tp;
    let tn = n - fg_n - fp;
    let cell = |fm: f64, gt: f64| {
        let a = fm - mu_fm;
        let b = gt - mu_gt;
        let align = 2.0 * a * b / (a * a + b * b + EPS);
        (align + 1.0) * (align + 1.0) / 4.0
    };
    (tp as f64 * cell(1.0, 1.0) + fp as f64 * cell(1.0, 0.0) + fn_ as f64 * cell(0.0, 1.0) + tn as f64 * cell(0.0, 0.0))
        / nf
}

pub fn e_measure_at(p: Pair, threshold: f64) -> f64 {
    let (mut tp, mut fp) = (0, 0);
    for i in 0..p.n() {
        if p.pred[i] >= threshold {
            if p.is_fg(i) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    enhanced_alignment(tp, fp, p.fg_count(), p.n())
}

/// Mean enhanced alignment over the bin-centre threshold sweep.
pub fn e_measure(p: Pair) -> f64 {
    let n = p.n();
    let fg_n = p.fg_count();
    let mut hist_all = [0usize; THRESHOLDS];
    let mut hist_fg = [0usize; THRESHOLDS];
    for i in 0..n {
        let v = p.pred[i];
        let mut b = ((v * THRESHOLDS as f64 - 0.5).floor()).clamp(-1.0, (THRESHOLDS - 1) as f64) as isize;
        while b >= 0 && e_threshold(b as usize) > v {
            b -= 1;
        }
        while b + 1 < THRESHOLDS as isize && e_threshold((b + 1) as usize) <= v {
            b += 1;
        }
        if b >= 0 {
            hist_all[b as usize] += 1;
            if p.is_fg(i) {
                hist_fg[b as usize] += 1;
            }
        }
    }
    let (mut a, mut f) = (0usize, 0usize);
    let mut sum = 0.0;
    for t in (0..THRESHOLDS).rev() {
        a += hist_all[t];
        f += hist_fg[t];
        sum += enhanced_alignment(f, a - f, fg_n, n);
    }
    sum / THRESHOLDS as f64
}

pub fn e_measure_adaptive(p: Pair) -> f64 {
    e_measure_at(p, adaptive_threshold(p.pred))
}

/// All six metrics for one prediction.
pub fn evaluate_pair(pred: &Tensor, gt: &Tensor, mode: ThresholdMode) -> Result<MetricsReport> {
    let p = Pair::new(pred, gt)?;
    let (f_sweep, f_max) = f_measures(p);
    let (f_avg, e_m) = match mode {
        ThresholdMode::Sweep => (f_sweep, e_measure(p)),
        ThresholdMode::Adaptive => (f_measure_adaptive(p), e_measure_adaptive(p)),
    };
    let f_max = f_max.max(f_avg);
    Ok(MetricsReport { f_avg, f_max, f_w: weighted_f(p).score, mae: mae(p), e_m, s_m: s_measure(p) })
}

/// Dataset-level metrics: the mean report plus one row per sample, in input order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: MetricsReport,
    pub per_sample: Vec<SampleMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

fn evaluate_one(model: &SaliencyModel, s: &RgbtSample, mode: ThresholdMode) -> Result<SampleMetrics> {
    let pred = model.predict(&s.rgb, &s.thermal)?;
    Ok(SampleMetrics { id: s.id.clone(), metrics: evaluate_pair(&pred.values, &s.gt, mode)? })
}

/// Predicts every sample without masking and averages the six metrics.
///
/// With `threads > 1` samples are split into contiguous chunks evaluated
/// concurrently; results are reduced in input order, so the report does not
/// depend on the thread count.
pub fn evaluate(
    model: &SaliencyModel,
    samples: &[RgbtSample],
    mode: ThresholdMode,
    threads: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let threads = threads.clamp(1, samples.len());
    let per_sample: Vec<SampleMetrics> = if threads == 1 {
        samples.iter().map(|s| evaluate_one(model, s, mode)).collect::<Result<_>>()?
    } else {
        let chunk = samples.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || part.iter().map(|s| evaluate_one(model, s, mode)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut out = Vec::with_capacity(samples.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(out)
        })?
    };
    let reports: Vec<MetricsReport> = per_sample.iter().map(|r| r.metrics).collect();
    let mean = MetricsReport::mean(&reports).expect("nonempty");
    Ok(EvalReport { mean, per_sample })
}
