#![allow(dead_code)]

pub mod oracles;

use kansam::autograd::{rel_err, Graph, Var};
use kansam::params::{ParamId, ParamStore};

/// Worst relative error between backward gradients and central differences
/// over every coordinate of the listed parameters. The denominator is
/// `max(|analytic|, |numeric|, floor)` with `floor` at least `1e-8`.
pub fn param_gradcheck<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, floor: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> kansam::Result<Var>,
{
    let mut g = Graph::new().track_frozen(true);
    let loss = f(&mut g, store).unwrap();
    let grads = g.backward(loss).unwrap();
    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = f(&mut g, store).unwrap();
        g.value(l).data()[0]
    };
    let mut worst = 0.0f64;
    for &id in ids {
        let analytic = grads.param(id).cloned().unwrap_or_else(|| kansam::Tensor::zeros(store.value(id).shape()));
        for i in 0..analytic.numel() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let e = if floor > 1e-8 {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
            } else {
                rel_err(a, numeric)
            };
            worst = worst.max(e);
        }
    }
    worst
}
