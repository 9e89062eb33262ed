use crate::error::Result;
use crate::tensor::Tensor;

use super::{Graph, Var};

/// Outcome of a central finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks the gradient of a scalar function of one tensor at `x` on every coordinate.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = (0..x.numel()).map(|i| (0, i)).collect();
    finite_diff_check_coords(|g, vs| f(g, vs[0]), std::slice::from_ref(x), &coords, eps)
}

/// Checks the gradient of `f(inputs)` on the listed `(input, flat index)` coordinates.
pub fn finite_diff_check_coords<F>(
    mut f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |f: &mut F, xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().zip(inputs).map(|(&v, t)| grads.get_or_zeros(v, t.shape())).collect();

    let mut report = GradCheckReport::empty();
    let mut probe = inputs.to_vec();
    for &(t, i) in coords {
        let orig = probe[t].data()[i];
        probe[t].data_mut()[i] = orig + eps;
        let plus = eval(&mut f, &probe)?;
        probe[t].data_mut()[i] = orig - eps;
        let minus = eval(&mut f, &probe)?;
        probe[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[t].data()[i];
        let err = rel_err(a, numeric);
        if err > report.max_rel_err || report.checked == 0 {
            report.max_rel_err = err;
            report.worst = (t, i);
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
