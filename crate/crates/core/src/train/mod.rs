//! AdamW training of the tunable partition with masked inputs, per-epoch
//! evaluation, best-MAE snapshots and a structured log.

mod ablation;
mod adamw;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::{augment, AugmentConfig, RgbtSample};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossReport};
use crate::masking::MaskConfig;
use crate::metrics::{evaluate, MetricsReport, ThresholdMode};
use crate::model::SaliencyModel;
use crate::params::{ParamId, Partition};
use crate::seed;
use crate::tensor::Tensor;

pub use ablation::{ablation_suite, AblationConfig, AblationReport, AblationRow, Variant};
pub use adamw::{clip_gradients, global_norm, AdamW, ClipMode, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub clip_mode: ClipMode,
    pub schedule: Schedule,
    pub max_epochs: usize,
    pub seed: u64,
    pub mask: MaskConfig,
    pub augment: AugmentConfig,
    /// Number of worker threads for evaluation.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.5,
            clip_mode: ClipMode::Norm,
            schedule: Schedule::Constant,
            max_epochs: 30,
            seed: 0,
            mask: MaskConfig::default(),
            augment: AugmentConfig::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip = {} must be positive", self.grad_clip));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("weight_decay must be >= 0 and adam_eps > 0".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.mask.validate()
    }

    pub fn optimizer(&self, lr: f64) -> AdamW {
        AdamW { lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps, weight_decay: self.weight_decay }
    }
}

/// First and second moments of one tunable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub id: ParamId,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    /// Current epoch; part of every per-sample random stream.
    pub epoch: u64,
    /// Planned step count, used by the cosine schedule.
    pub total_steps: u64,
    pub moments: Vec<Moments>,
    pub best: Option<BestSnapshot>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: u64,
    pub mae: f64,
}

impl TrainState {
    /// Zeroed moment buffers for exactly the tunable partition.
    pub fn new(model: &SaliencyModel) -> Self {
        let store = model.store();
        let moments = store
            .ids_in(Partition::Tunable)
            .into_iter()
            .map(|id| {
                let n = store.value(id).numel();
                Moments { id, m: vec![0.0; n], v: vec![0.0; n] }
            })
            .collect();
        Self { step: 0, epoch: 0, total_steps: 0, moments, best: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: LossReport,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

/// Seed of the mask drawn for `id` in `epoch`.
pub fn mask_seed(seed: u64, id: &str, epoch: u64) -> u64 {
    seed::mix(seed, &[seed::hash_str(id), epoch, 1])
}

/// Seed of the augmentation applied to `id` in `epoch`.
pub fn augment_seed(seed: u64, id: &str, epoch: u64) -> u64 {
    seed::mix(seed, &[seed::hash_str(id), epoch, 2])
}

/// Forward with masking, batch-mean loss, backward, clip, AdamW on the tunable partition.
pub fn train_step(
    model: &mut SaliencyModel,
    batch: &[RgbtSample],
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Contract("train_step needs a nonempty batch".into()));
    }
    let precision = model.config().precision;
    let mut grads: Vec<Vec<f64>> = state.moments.iter().map(|m| vec![0.0; m.m.len()]).collect();
    let mut loss = LossReport::default();
    let scale = 1.0 / batch.len() as f64;
    let ids = || batch.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(", ");
    let locate = |e: Error, sample: &str| match e {
        Error::Numerical(m) => Error::Numerical(format!(
            "{m} at step {} (epoch {}, batch [{}], sample {sample})",
            state.step + 1,
            state.epoch,
            ids()
        )),
        other => other,
    };
    for sample in batch {
        let mut g = Graph::with_precision(precision);
        let forward = |g: &mut Graph| -> Result<_> {
            let seed = mask_seed(cfg.seed, &sample.id, state.epoch);
            let pred = model.forward_train(g, &sample.rgb, &sample.thermal, &cfg.mask, seed)?;
            total_loss(g, pred, &sample.gt)
        };
        let l = forward(&mut g).map_err(|e| locate(e, &sample.id))?;
        let r = l.report(&g);
        if !r.total.is_finite() {
            return Err(locate(Error::Numerical(format!("loss is {}", r.total)), &sample.id));
        }
        loss.iou_loss += r.iou_loss * scale;
        loss.dice_loss += r.dice_loss * scale;
        let gr = g.backward(l.total)?;
        for (buf, mom) in grads.iter_mut().zip(&state.moments) {
            if let Some(t) = gr.param(mom.id) {
                for (a, b) in buf.iter_mut().zip(t.data()) {
                    *a += b * scale;
                }
            }
        }
    }
    loss.total = loss.iou_loss + loss.dice_loss;

    let grad_norm = clip_gradients(&mut grads, cfg.clip_mode, cfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!(
            "gradient norm is {grad_norm} at step {} (epoch {}, batch [{}])",
            state.step + 1,
            state.epoch,
            ids()
        )));
    }
    let lr = cfg.schedule.lr(cfg.lr, state.step, state.total_steps);
    let opt = cfg.optimizer(lr);
    let t = state.step + 1;
    let store = model.store_mut();
    for (mom, g) in state.moments.iter_mut().zip(&grads) {
        opt.update(t, store.value_mut(mom.id).data_mut(), g, &mut mom.m, &mut mom.v);
    }
    state.step = t;
    Ok(StepReport { loss, grad_norm, lr })
}

/// One structured log record; field order is stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// `"step"` or `"epoch"`.
    pub kind: String,
    pub epoch: u64,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub batch: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<LossReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<MetricsReport>,
    /// Wall-clock milliseconds since the start of the run; the only nondeterministic field.
    pub wall_ms: u64,
}

impl LogRow {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log rows always serialize")
    }
}

pub struct FitResult {
    pub log: Vec<LogRow>,
    pub state: TrainState,
    /// Model at the epoch with the lowest evaluation MAE.
    pub best: SaliencyModel,
}

/// Trains for `cfg.max_epochs` epochs, evaluating on `eval` after each.
///
/// `on_row` sees every log row as it is produced.
pub fn fit(
    model: &mut SaliencyModel,
    train: &[RgbtSample],
    eval: &[RgbtSample],
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&LogRow),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if eval.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let elapsed = || start.elapsed().as_millis() as u64;
    let frozen: Vec<(ParamId, Tensor)> =
        model.store().ids_in(Partition::Frozen).into_iter().map(|id| (id, model.store().value(id).clone())).collect();
    let mut state = TrainState::new(model);
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    state.total_steps = (per_epoch * cfg.max_epochs) as u64;
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut push = |row: LogRow, log: &mut Vec<LogRow>| {
        on_row(&row);
        log.push(row);
    };

    for epoch in 0..cfg.max_epochs as u64 {
        state.epoch = epoch;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix(cfg.seed, &[epoch, 3])));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<RgbtSample> = chunk
                .iter()
                .map(|&i| augment(&train[i], &cfg.augment, augment_seed(cfg.seed, &train[i].id, epoch)))
                .collect();
            let r = train_step(model, &batch, &mut state, cfg)?;
            epoch_loss += r.loss.total * chunk.len() as f64;
            let row = LogRow {
                kind: "step".into(),
                epoch,
                step: state.step,
                batch: Some(batch.iter().map(|s| s.id.clone()).collect()),
                loss: Some(r.loss),
                grad_norm: Some(r.grad_norm),
                lr: Some(r.lr),
                train_loss: None,
                eval: None,
                wall_ms: elapsed(),
            };
            push(row, &mut log);
        }
        check_frozen(model, &frozen, &state)?;

        let report = evaluate(model, eval, ThresholdMode::Sweep, cfg.threads)?.mean;
        if state.best.is_none_or(|b| report.mae < b.mae) {
            state.best = Some(BestSnapshot { epoch, mae: report.mae });
            best = model.clone();
        }
        let row = LogRow {
            kind: "epoch".into(),
            epoch,
            step: state.step,
            batch: None,
            loss: None,
            grad_norm: None,
            lr: None,
            train_loss: Some(epoch_loss / train.len() as f64),
            eval: Some(report),
            wall_ms: elapsed(),
        };
        push(row, &mut log);
    }
    Ok(FitResult { log, state, best })
}

/// Frozen tensors unchanged and optimizer state confined to the tunable partition.
fn check_frozen(model: &SaliencyModel, frozen: &[(ParamId, Tensor)], state: &TrainState) -> Result<()> {
    let store = model.store();
    for (id, init) in frozen {
        let now = store.value(*id);
        if now.data().iter().zip(init.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::Contract(format!("frozen parameter {} changed", store.get(*id).name)));
        }
    }
    let tunable = store.ids_in(Partition::Tunable);
    if state.moments.len() != tunable.len() || state.moments.iter().zip(&tunable).any(|(m, id)| m.id != *id) {
        return Err(Error::Contract("optimizer state does not match the tunable partition".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
