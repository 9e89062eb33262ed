//! Central finite-difference gradient checks at three scales: single graph
//! primitives, KAN layers and adapters, and the full saliency network.

use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{finite_diff_check_coords, GradCheckReport, Graph, Reduce, Var};
use crate::error::{Error, Result};
use crate::kan::{KanAdapter, KanInit, KanLayer, SplineGrid};
use crate::loss::total_loss;
use crate::model::{ModelConfig, SaliencyModel};
use crate::params::{ParamId, ParamStore, Partition};
use crate::seed::{mix, rng, uniform_vec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Primitive,
    Layer,
    Model,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Primitive, Scale::Layer, Scale::Model];

    pub fn name(self) -> &'static str {
        match self {
            Scale::Primitive => "primitive",
            Scale::Layer => "layer",
            Scale::Model => "model",
        }
    }

    /// Largest accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Scale::Primitive | Scale::Layer => 1e-5,
            Scale::Model => 1e-4,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scale::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown gradcheck scale {s:?}; expected primitive, layer or model")))
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub target: String,
    pub report: GradCheckReport,
}

const EPS: f64 = 1e-6;
/// Loss change targeted by the first step of [`param_gradcheck`].
const LOSS_STEP: f64 = 1e-8;
const MIN_STEP: f64 = 1e-6;
const MAX_STEP: f64 = 1e-2;
/// Tenfold step reductions allowed while successive estimates disagree.
const REFINEMENTS: usize = 2;
const AGREEMENT: f64 = 1e-5;
/// Share of a tensor's largest gradient entry below which an entry is
/// compared at that scale in [`param_gradcheck`].
pub const TENSOR_FLOOR: f64 = 1e-3;

/// Runs every check at `scale`.
pub fn run(scale: Scale, seed: u64) -> Result<Vec<CheckResult>> {
    match scale {
        Scale::Primitive => primitive_checks(seed),
        Scale::Layer => layer_checks(seed),
        Scale::Model => Ok(vec![model_check(&ModelConfig::tiny(), seed, 4)?]),
    }
}

/// Worst relative error between backward gradients and central differences
/// over the listed `(parameter, flat index)` coordinates of the store that
/// `store_of` exposes inside `holder`.
///
/// Each coordinate uses the fourth-order central stencil. The first step is
/// sized so the loss moves by about `LOSS_STEP`, which keeps rounding noise
/// small next to tiny gradients; while the estimate at a tenfold smaller step
/// disagrees (a clamped spline input crossing its domain edge inside the
/// stencil) the step keeps shrinking. The denominator is
/// `max(|analytic|, |numeric|, TENSOR_FLOOR * max|grad of that tensor|, 1e-8)`.
pub fn param_gradcheck<M, F>(
    holder: &mut M,
    store_of: fn(&mut M) -> &mut ParamStore,
    coords: &[(ParamId, usize)],
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &M) -> Result<Var>,
{
    let mut g = Graph::new().track_frozen(true);
    let loss = f(&mut g, holder)?;
    let grads = g.backward(loss)?;
    let eval = |holder: &M| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, holder)?;
        g.value(l).item()
    };
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 };
    for &(id, i) in coords {
        let (a, scale) =
            grads.param(id).map_or((0.0, 0.0), |t| (t.data()[i], t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        let orig = store_of(holder).value(id).data()[i];
        let floor = (TENSOR_FLOOR * scale).max(1e-8);
        let mut stencil = |h: f64| -> Result<f64> {
            let mut at = |d: f64| -> Result<f64> {
                store_of(holder).value_mut(id).data_mut()[i] = orig + d;
                eval(holder)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
        };
        let mut h = (LOSS_STEP / a.abs().max(1e-300)).clamp(MIN_STEP, MAX_STEP);
        let mut numeric = stencil(h)?;
        for _ in 0..REFINEMENTS {
            let finer = stencil(h / 10.0)?;
            let agree = (finer - numeric).abs() <= AGREEMENT * finer.abs().max(numeric.abs()).max(floor);
            h /= 10.0;
            numeric = finer;
            if agree {
                break;
            }
        }
        store_of(holder).value_mut(id).data_mut()[i] = orig;
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err > report.max_rel_err || report.checked == 0 {
            report = GradCheckReport { max_rel_err: err, worst: (id.index(), i), analytic: a, numeric, ..report };
        }
        report.checked += 1;
    }
    Ok(report)
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform_vec(&mut rng(seed), n, lo, hi)).expect("shape matches length")
}

/// Magnitudes in `[0.5, 2]` with random signs, so no coordinate sits near
/// the zero of a product or the kink of relu.
fn random_signed(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.5..=2.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum((y * w)^2)` with fixed non-symmetric weights `w`.
fn weighted_square(g: &mut Graph, y: Var) -> Result<Var> {
    let w = g.constant(Tensor::from_fn(g.shape(y), |i| 0.3 + (i as f64 * 0.37).sin()));
    let p = g.mul(y, w)?;
    let p2 = g.mul(p, p)?;
    g.sum(p2)
}

fn all_coords(ts: &[Tensor]) -> Vec<(usize, usize)> {
    ts.iter().enumerate().flat_map(|(k, t)| (0..t.numel()).map(move |i| (k, i))).collect()
}

type PrimitiveFn = fn(&mut Graph, &[Var]) -> Result<Var>;

fn primitive_cases() -> Vec<(&'static str, Vec<Vec<usize>>, PrimitiveFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1])),
        ("linear", vec![vec![3, 4], vec![4, 2], vec![2]], |g, v| g.linear(v[0], v[1], Some(v[2]))),
        ("pointwise_conv", vec![vec![2, 2, 3], vec![3, 2], vec![2]], |g, v| g.pointwise_conv(v[0], v[1], Some(v[2]))),
        ("add", vec![vec![2, 3], vec![2, 3]], |g, v| g.add(v[0], v[1])),
        ("add_broadcast", vec![vec![2, 3], vec![1]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, v| g.mul(v[0], v[1])),
        ("div", vec![vec![2, 3], vec![2, 3]], |g, v| {
            let three = g.constant(Tensor::scalar(3.0));
            let d = g.add(v[1], three)?;
            g.div(v[0], d)
        }),
        ("silu", vec![vec![2, 3]], |g, v| g.silu(v[0])),
        ("sigmoid", vec![vec![2, 3]], |g, v| g.sigmoid(v[0])),
        ("relu", vec![vec![2, 3]], |g, v| g.relu(v[0])),
        ("scale", vec![vec![2, 3]], |g, v| g.scale(v[0], -1.7)),
        ("sum", vec![vec![2, 3]], |g, v| {
            let s = g.sum(v[0])?;
            g.mul(s, s)
        }),
        ("mean", vec![vec![2, 3]], |g, v| {
            let s = g.mean(v[0])?;
            g.mul(s, s)
        }),
        ("reduce_axis", vec![vec![2, 3, 2]], |g, v| g.reduce(Reduce::Mean, v[0], &[1])),
        ("reshape", vec![vec![2, 3]], |g, v| g.reshape(v[0], &[3, 2])),
        ("gather", vec![vec![2, 3]], |g, v| {
            let index: Rc<[usize]> = Rc::from(vec![5, 0, 0, 3, 2, 2, 1, 4]);
            g.gather(v[0], index, &[2, 4])
        }),
        ("transpose", vec![vec![2, 3]], |g, v| {
            let t = g.transpose(v[0])?;
            g.matmul(v[0], t)
        }),
        ("concat", vec![vec![2, 2, 1], vec![2, 2, 3]], |g, v| g.concat(&[v[0], v[1]], 2)),
        ("nearest_resize", vec![vec![2, 3, 1]], |g, v| g.nearest_resize(v[0], 3, 5)),
        ("nearest_upsample", vec![vec![2, 2, 2]], |g, v| g.nearest_upsample(v[0], 2)),
        ("space_to_depth", vec![vec![4, 4, 1]], |g, v| g.space_to_depth(v[0], 2)),
        ("depth_to_space", vec![vec![2, 2, 4]], |g, v| g.depth_to_space(v[0], 2)),
        ("softmax", vec![vec![2, 3]], |g, v| g.softmax(v[0])),
        ("layer_norm", vec![vec![2, 4]], |g, v| g.layer_norm(v[0])),
        ("bspline_basis", vec![vec![2, 3]], |g, v| {
            let grid = SplineGrid::new(3, 5, -2.0, 2.0)?;
            g.bspline_basis(v[0], &grid)
        }),
    ]
}

/// One check per differentiable graph operation.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    primitive_cases()
        .into_iter()
        .enumerate()
        .map(|(k, (name, shapes, op))| {
            let inputs: Vec<Tensor> =
                shapes.iter().enumerate().map(|(j, s)| random_signed(s, mix(seed, &[k as u64, j as u64]))).collect();
            let report = finite_diff_check_coords(
                |g, v| {
                    let y = op(g, v)?;
                    weighted_square(g, y)
                },
                &inputs,
                &all_coords(&inputs),
                EPS,
            )?;
            Ok(CheckResult { target: name.into(), report })
        })
        .collect()
}

fn every_coord(store: &ParamStore, ids: &[ParamId]) -> Vec<(ParamId, usize)> {
    ids.iter().flat_map(|&id| (0..store.value(id).numel()).map(move |i| (id, i))).collect()
}

fn perturb(store: &mut ParamStore, ids: &[ParamId], seed: u64, amplitude: f64) {
    let mut r = rng(seed);
    for &id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += r.gen_range(-amplitude..=amplitude);
        }
    }
}

/// KAN layer (input and parameters), adapter parameters with a trained-like
/// up layer, and the IoU + Dice loss.
pub fn layer_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let grid = SplineGrid::new(3, 5, -1.0, 1.0)?;
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let mut r = rng(mix(seed, &[1]));
    let layer = KanLayer::new(
        &mut store,
        "kan",
        4,
        3,
        grid.clone(),
        KanInit::Random { spline_scale: 0.5 },
        Partition::Tunable,
        &mut r,
    )?;
    let x = random(&[5, 4], mix(seed, &[2]), -1.2, 1.2);
    let report = finite_diff_check_coords(
        |g, v| {
            let y = layer.forward(g, &store, v[0])?;
            weighted_square(g, y)
        },
        std::slice::from_ref(&x),
        &all_coords(std::slice::from_ref(&x)),
        EPS,
    )?;
    out.push(CheckResult { target: "kan_layer.input".into(), report });
    let ids = layer.param_ids();
    let coords = every_coord(&store, &ids);
    let report = param_gradcheck(
        &mut store,
        |s| s,
        &coords,
        |g, s| {
            let xv = g.constant(x.clone());
            let y = layer.forward(g, s, xv)?;
            weighted_square(g, y)
        },
    )?;
    out.push(CheckResult { target: "kan_layer.params".into(), report });

    let mut store = ParamStore::new();
    let mut r = rng(mix(seed, &[3]));
    let adapter = KanAdapter::new(&mut store, "adapter", 8, 4, 2, &grid, &mut r)?;
    let ids = adapter.param_ids();
    perturb(&mut store, &ids, mix(seed, &[4]), 0.3);
    let f = random(&[2, 2, 8], mix(seed, &[5]), -0.8, 0.8);
    let t = random(&[4, 4, 4], mix(seed, &[6]), -0.8, 0.8);
    let coords = every_coord(&store, &ids);
    let report = param_gradcheck(
        &mut store,
        |s| s,
        &coords,
        |g, s| {
            let fv = g.constant(f.clone());
            let tv = g.constant(t.clone());
            let y = adapter.forward(g, s, fv, tv)?;
            weighted_square(g, y)
        },
    )?;
    out.push(CheckResult { target: "kan_adapter.params".into(), report });

    let gt = Tensor::from_fn(&[6, 6], |i| if (i / 6 + i % 6) % 3 == 0 { 1.0 } else { 0.0 });
    let pred = random(&[6, 6], mix(seed, &[7]), 0.05, 0.95);
    let report = finite_diff_check_coords(
        |g, v| Ok(total_loss(g, v[0], &gt)?.total),
        std::slice::from_ref(&pred),
        &all_coords(std::slice::from_ref(&pred)),
        EPS,
    )?;
    out.push(CheckResult { target: "loss.iou_dice".into(), report });
    Ok(out)
}

fn model_inputs(config: &ModelConfig, seed: u64) -> (Tensor, Tensor, Tensor) {
    let s = config.input_size;
    let rgb = random(&[s, s, 3], mix(seed, &[2]), 0.0, 1.0);
    let thermal = random(&[s, s, 1], mix(seed, &[3]), 0.0, 1.0);
    let gt = Tensor::from_fn(&[s, s], |i| {
        let (r, c) = ((i / s) as f64 / s as f64 - 0.5, (i % s) as f64 / s as f64 - 0.5);
        if r * r + c * c < 0.09 {
            1.0
        } else {
            0.0
        }
    });
    (rgb, thermal, gt)
}

/// Full network from input pair to loss, over every frozen and tunable
/// tensor: `per_tensor` deterministic coordinates each. Tunable tensors are
/// perturbed first so the zero-initialized adapter up layers do not hide the
/// paths behind them.
pub fn model_check(config: &ModelConfig, seed: u64, per_tensor: usize) -> Result<CheckResult> {
    let mut model = SaliencyModel::new(config.clone(), seed)?;
    let (_, tunable) = model.partition_parameters();
    perturb(model.store_mut(), &tunable, mix(seed, &[1]), 0.05);
    let (rgb, thermal, gt) = model_inputs(config, seed);

    let mut pick = rng(mix(seed, &[4]));
    let ids: Vec<ParamId> = model.store().ids().collect();
    let coords: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| {
            let n = model.store().value(id).numel();
            (0..per_tensor.min(n)).map(|_| (id, pick.gen_range(0..n))).collect::<Vec<_>>()
        })
        .collect();

    let report = param_gradcheck(&mut model, SaliencyModel::store_mut, &coords, |g, m| {
        let y = m.forward(g, &rgb, &thermal)?;
        Ok(total_loss(g, y, &gt)?.total)
    })?;
    Ok(CheckResult { target: "model.loss".into(), report })
}
