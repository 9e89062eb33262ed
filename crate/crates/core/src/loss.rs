//! Hybrid IoU + Dice training loss.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive smoothing in numerator and denominator of both losses.
pub const SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iou_loss: f64,
    pub dice_loss: f64,
    pub total: f64,
}

/// Loss nodes on a graph.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub iou: Var,
    pub dice: Var,
    pub total: Var,
}

impl LossVars {
    pub fn report(&self, g: &Graph) -> LossReport {
        let v = |x: Var| g.value(x).data()[0];
        LossReport { iou_loss: v(self.iou), dice_loss: v(self.dice), total: v(self.total) }
    }
}

struct Sums {
    inter: Var,
    pred: Var,
    gt: Var,
}

fn sums(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<Sums> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::dim(
            "loss",
            format!("prediction {:?} against ground truth {:?}", g.shape(pred), gt.shape()),
        ));
    }
    let gt_sum: f64 = gt.data().iter().sum();
    let gv = g.constant(gt.clone());
    let prod = g.mul(pred, gv)?;
    let inter = g.sum(prod)?;
    let pred = g.sum(pred)?;
    let gt = g.constant(Tensor::scalar(gt_sum));
    Ok(Sums { inter, pred, gt })
}

fn one_minus(g: &mut Graph, x: Var) -> Result<Var> {
    let one = g.constant(Tensor::scalar(1.0));
    g.sub(one, x)
}

fn plus_smooth(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.constant(Tensor::scalar(SMOOTH));
    g.add(x, s)
}

fn iou_from(g: &mut Graph, s: &Sums) -> Result<Var> {
    let num = plus_smooth(g, s.inter)?;
    let union = g.add(s.pred, s.gt)?;
    let union = g.sub(union, s.inter)?;
    let den = plus_smooth(g, union)?;
    let ratio = g.div(num, den)?;
    one_minus(g, ratio)
}

fn dice_from(g: &mut Graph, s: &Sums) -> Result<Var> {
    let twice = g.scale(s.inter, 2.0)?;
    let num = plus_smooth(g, twice)?;
    let den = g.add(s.pred, s.gt)?;
    let den = plus_smooth(g, den)?;
    let ratio = g.div(num, den)?;
    one_minus(g, ratio)
}

/// `1 - (Σpg + ε) / (Σp + Σg - Σpg + ε)`.
pub fn iou_loss(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<Var> {
    let s = sums(g, pred, gt)?;
    iou_from(g, &s)
}

/// `1 - (2Σpg + ε) / (Σp + Σg + ε)`.
pub fn dice_loss(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<Var> {
    let s = sums(g, pred, gt)?;
    dice_from(g, &s)
}

pub fn total_loss(g: &mut Graph, pred: Var, gt: &Tensor) -> Result<LossVars> {
    let s = sums(g, pred, gt)?;
    let iou = iou_from(g, &s)?;
    let dice = dice_from(g, &s)?;
    let total = g.add(iou, dice)?;
    Ok(LossVars { iou, dice, total })
}
