use std::rc::Rc;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore, Partition};
use crate::seed::Rng64;
use crate::tensor::Tensor;

use super::SplineGrid;

/// How a [`KanLayer`]'s parameters start out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KanInit {
    /// Base weights uniform in `±1/sqrt(n_in)`, spline coefficients uniform in
    /// `±spline_scale`, edge scales one.
    Random { spline_scale: f64 },
    /// Base weights and spline coefficients zero, edge scales one: the layer
    /// outputs exactly zero but every coefficient still receives gradient.
    ZeroOutput,
}

/// A matrix of learnable univariate functions `phi[q][p]`, one per
/// (output, input) edge:
///
/// `y_q = sum_p scale[q,p] * (base[q,p] * silu(x_p) + sum_j coeff[q,p,j] * B_j(x_p))`
#[derive(Clone, Debug, PartialEq)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    grid: SplineGrid,
    coeffs: ParamId,
    base_weight: ParamId,
    edge_scale: ParamId,
}

impl KanLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        init: KanInit,
        partition: Partition,
        rng: &mut Rng64,
    ) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            return Err(Error::Config(format!("KAN layer {name} needs positive widths, got {n_in}->{n_out}")));
        }
        let count = grid.basis_count();
        let (coeffs, base) = match init {
            KanInit::Random { spline_scale } => {
                let bound = 1.0 / (n_in as f64).sqrt();
                let c = Tensor::from_fn(&[n_out, n_in, count], |_| rng.gen_range(-spline_scale..=spline_scale));
                let b = Tensor::from_fn(&[n_out, n_in], |_| rng.gen_range(-bound..=bound));
                (c, b)
            }
            KanInit::ZeroOutput => (Tensor::zeros(&[n_out, n_in, count]), Tensor::zeros(&[n_out, n_in])),
        };
        let coeffs = store.add(format!("{name}.spline_coeffs"), coeffs, partition);
        let base_weight = store.add(format!("{name}.base_weight"), base, partition);
        let edge_scale = store.add(format!("{name}.edge_scale"), Tensor::ones(&[n_out, n_in]), partition);
        Ok(KanLayer { n_in, n_out, grid, coeffs, base_weight, edge_scale })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> ParamId {
        self.coeffs
    }

    pub fn base_weight(&self) -> ParamId {
        self.base_weight
    }

    pub fn edge_scale(&self) -> ParamId {
        self.edge_scale
    }

    pub fn param_ids(&self) -> [ParamId; 3] {
        [self.coeffs, self.base_weight, self.edge_scale]
    }

    /// Closed-form parameter count: spline + base + scale.
    pub fn param_count(n_in: usize, n_out: usize, grid: &SplineGrid) -> usize {
        n_out * n_in * grid.basis_count() + 2 * n_out * n_in
    }

    /// Applies the layer over the last axis of `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.n_in) {
            return Err(Error::dim("kan_layer", format!("input {shape:?} does not end in {} channels", self.n_in)));
        }
        let rows = g.value(x).numel() / self.n_in;
        let count = self.grid.basis_count();
        let x2 = g.reshape(x, &[rows, self.n_in])?;

        let scale = g.param(store, self.edge_scale);
        let base = g.param(store, self.base_weight);
        let coeffs = g.param(store, self.coeffs);

        let act = g.silu(x2)?;
        let wb = g.mul(scale, base)?;
        let wb_t = g.transpose(wb)?;
        let y_base = g.matmul(act, wb_t)?;

        let basis = g.bspline_basis(x2, &self.grid)?;
        let basis = g.reshape(basis, &[rows, self.n_in * count])?;
        let repeat: Rc<[usize]> = (0..self.n_out * self.n_in * count).map(|i| i / count).collect();
        let scale_rep = g.gather(scale, repeat, &[self.n_out, self.n_in, count])?;
        let wc = g.mul(coeffs, scale_rep)?;
        let wc = g.reshape(wc, &[self.n_out, self.n_in * count])?;
        let wc_t = g.transpose(wc)?;
        let y_spline = g.matmul(basis, wc_t)?;

        let y = g.add(y_base, y_spline)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.n_out;
        g.reshape(y, &out_shape)
    }
}
