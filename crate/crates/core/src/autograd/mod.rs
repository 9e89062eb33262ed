//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its output
//! value and the handles of its inputs, so node order is a topological order.
//! [`Graph::backward`] walks the tape once in reverse and accumulates
//! gradients (`+=`) into zero-initialized buffers.

mod gradcheck;
mod kernels;

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::SplineGrid;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_coords, rel_err, GradCheckReport};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Numeric precision of forward values. `F32` rounds every recorded value
/// to single precision; storage stays `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Silu,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Silu,
    Sigmoid,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    // `a_bcast` / `b_bcast`: operand is a one-element tensor broadcast over the other.
    Binary { kind: Binary, a: Var, b: Var, a_bcast: bool, b_bcast: bool },
    Unary { kind: Unary, x: Var },
    Scale { x: Var, factor: f64 },
    Reduce { x: Var, map: Rc<[usize]>, factor: f64 },
    Reshape { x: Var },
    Gather { x: Var, index: Rc<[usize]> },
    Concat { xs: Vec<Var>, outer: usize, inners: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, cin: usize, cout: usize },
    Softmax { x: Var, cols: usize },
    LayerNorm { x: Var, cols: usize, inv_std: Vec<f64> },
    Basis { x: Var, count: usize, deriv: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    precision: Precision,
    check_finite: bool,
    bindings: HashMap<ParamId, Var>,
    track_frozen: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            nodes: Vec::new(),
            precision,
            check_finite: cfg!(debug_assertions),
            bindings: HashMap::new(),
            track_frozen: false,
        }
    }

    /// Also record gradients for frozen parameters (used by gradient checks).
    pub fn track_frozen(mut self, on: bool) -> Self {
        self.track_frozen = on;
        self
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.precision == Precision::F32 {
            for v in value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        if self.check_finite && !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {} at node {}",
                op_name(&op),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- leaves -----

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let mut value = value;
        if self.precision == Precision::F32 {
            for v in value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Binds a stored parameter as a leaf. Repeated calls return the same
    /// node, so a parameter shared by several paths accumulates one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bindings.get(&id) {
            return v;
        }
        let p = store.get(id);
        let grad = self.track_frozen || p.partition == crate::params::Partition::Tunable;
        let v = self.leaf(p.value.clone(), grad);
        self.bindings.insert(id, v);
        v
    }

    pub fn binding(&self, id: ParamId) -> Option<Var> {
        self.bindings.get(&id).copied()
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, m, k, n }, rg)
    }

    /// Per-row affine map over the last axis: `x[.., cin] · w[cin, cout] + b[cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let cin = *sx.last().ok_or_else(|| Error::dim("linear", "scalar input"))?;
        if sw.len() != 2 || sw[0] != cin {
            return Err(Error::dim("linear", format!("input {sx:?} against weight {sw:?}")));
        }
        let cout = sw[1];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::dim("linear", format!("bias {:?} for {cout} outputs", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / cin;
        let mut out = kernels::matmul(self.value(x).data(), self.value(w).data(), rows, cin, cout);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(cout) {
                for (o, bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = cout;
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        self.push(Tensor::new(&shape, out)?, Op::Linear { x, w, b, rows, cin, cout }, rg)
    }

    /// 1x1 convolution over an `[H, W, Cin]` feature map.
    pub fn pointwise_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if self.shape(x).len() != 3 {
            return Err(Error::dim("pointwise_conv", format!("expected [H, W, C], got {:?}", self.shape(x))));
        }
        self.linear(x, w, b)
    }

    // ----- elementwise -----

    pub fn elementwise(&mut self, op: Elementwise, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!("{op:?} takes {arity} operands, got {}", inputs.len())));
        }
        match op {
            Elementwise::Add => self.binary(Binary::Add, inputs[0], inputs[1]),
            Elementwise::Sub => self.binary(Binary::Sub, inputs[0], inputs[1]),
            Elementwise::Mul => self.binary(Binary::Mul, inputs[0], inputs[1]),
            Elementwise::Div => self.binary(Binary::Div, inputs[0], inputs[1]),
            Elementwise::Silu => self.unary(Unary::Silu, inputs[0]),
            Elementwise::Sigmoid => self.unary(Unary::Sigmoid, inputs[0]),
            Elementwise::Relu => self.unary(Unary::Relu, inputs[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Silu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale { x, factor }, rg)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (a_bcast, b_bcast, shape) = if va.shape() == vb.shape() {
            (false, false, va.shape().to_vec())
        } else if vb.numel() == 1 {
            (false, true, va.shape().to_vec())
        } else if va.numel() == 1 {
            (true, false, vb.shape().to_vec())
        } else {
            return Err(Error::dim(
                "elementwise",
                format!("{kind:?} of {:?} and {:?} does not broadcast", va.shape(), vb.shape()),
            ));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let out: Vec<f64> =
            (0..n).map(|i| f(da[if a_bcast { 0 } else { i }], db[if b_bcast { 0 } else { i }])).collect();
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::Binary { kind, a, b, a_bcast, b_bcast }, rg)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let out = match kind {
            Unary::Silu => self.value(x).map(|v| v * kernels::sigmoid(v)),
            Unary::Sigmoid => self.value(x).map(kernels::sigmoid),
            Unary::Relu => self.value(x).map(|v| v.max(0.0)),
        };
        let rg = self.requires_grad(x);
        self.push(out, Op::Unary { kind, x }, rg)
    }

    // ----- reductions -----

    /// Reduces over `axes` (dropped from the result). Empty `axes` reduces all.
    pub fn reduce(&mut self, op: Reduce, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let all = axes.is_empty();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::dim("reduce", format!("axis {bad} out of range for shape {shape:?}")));
        }
        let keep: Vec<bool> = (0..shape.len()).map(|d| !all && !axes.contains(&d)).collect();
        let out_shape: Vec<usize> = shape.iter().zip(&keep).filter(|(_, &k)| k).map(|(&d, _)| d).collect();
        let out_len: usize = out_shape.iter().product();
        let count = self.value(x).numel() / out_len;
        let map: Rc<[usize]> = kernels::reduce_map(&shape, &keep).into();
        let mut out = vec![0.0; out_len];
        for (v, &o) in self.value(x).data().iter().zip(map.iter()) {
            out[o] += v;
        }
        let factor = match op {
            Reduce::Sum => 1.0,
            Reduce::Mean => 1.0 / count as f64,
        };
        if factor != 1.0 {
            out.iter_mut().for_each(|v| *v *= factor);
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(&out_shape, out)?, Op::Reduce { x, map, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, x, &[])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, x, &[])
    }

    // ----- shape manipulation -----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let n: usize = shape.iter().product();
        if n != v.numel() {
            return Err(Error::dim("reshape", format!("{:?} to {shape:?}", v.shape())));
        }
        let out = Tensor::new(shape, v.data().to_vec())?;
        let rg = self.requires_grad(x);
        self.push(out, Op::Reshape { x }, rg)
    }

    /// `y[i] = x[index[i]]` with output `shape`; the gradient scatter-adds.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::dim("gather", format!("index {bad} out of range for {} elements", src.len())));
        }
        let out: Vec<f64> = index.iter().map(|&i| src[i]).collect();
        let out = Tensor::new(shape, out)?;
        let rg = self.requires_grad(x);
        self.push(out, Op::Gather { x, index }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let index: Rc<[usize]> = (0..r * c).map(|i| (i % r) * c + i / r).collect();
        self.gather(x, index, &[c, r])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::dim("concat", "no operands"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", format!("{s:?} does not match {base:?} off axis {axis}")));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner_tail: usize = base[axis + 1..].iter().product();
        let inners: Vec<usize> = xs.iter().map(|&x| self.shape(x)[axis] * inner_tail).collect();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (&x, &inner) in xs.iter().zip(&inners) {
                out.extend_from_slice(&self.value(x).data()[o * inner..(o + 1) * inner]);
            }
        }
        let rg = self.any_grad(xs);
        self.push(Tensor::new(&out_shape, out)?, Op::Concat { xs: xs.to_vec(), outer, inners }, rg)
    }

    /// Nearest-neighbour resize of an `[H, W, C]` map; source index `floor(i * in / out)`.
    pub fn nearest_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || out_h == 0 || out_w == 0 {
            return Err(Error::dim("nearest_resize", format!("{s:?} to {out_h}x{out_w}")));
        }
        let index: Rc<[usize]> = kernels::nearest_index(s[0], s[1], s[2], out_h, out_w).into();
        self.gather(x, index, &[out_h, out_w, s[2]])
    }

    pub fn nearest_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if factor == 0 || s.len() != 3 {
            return Err(Error::dim("nearest_upsample", format!("{s:?} by factor {factor}")));
        }
        self.nearest_resize(x, s[0] * factor, s[1] * factor)
    }

    /// `[H, W, C] -> [H/p, W/p, p*p*C]`; each output pixel holds its `p x p`
    /// block flattened in (row, col, channel) order.
    pub fn space_to_depth(&mut self, x: Var, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || p == 0 || !s[0].is_multiple_of(p) || !s[1].is_multiple_of(p) {
            return Err(Error::dim("space_to_depth", format!("{s:?} is not divisible into {p}x{p} blocks")));
        }
        let index: Rc<[usize]> = kernels::space_to_depth_index(s[0], s[1], s[2], p).into();
        self.gather(x, index, &[s[0] / p, s[1] / p, p * p * s[2]])
    }

    /// Inverse of [`space_to_depth`](Self::space_to_depth).
    pub fn depth_to_space(&mut self, x: Var, p: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || p == 0 || !s[2].is_multiple_of(p * p) {
            return Err(Error::dim("depth_to_space", format!("{s:?} channels not divisible by {}", p * p)));
        }
        let c = s[2] / (p * p);
        let forward = kernels::space_to_depth_index(s[0] * p, s[1] * p, c, p);
        let mut index = vec![0; forward.len()];
        for (dst, &src) in forward.iter().enumerate() {
            index[src] = dst;
        }
        self.gather(x, index.into(), &[s[0] * p, s[1] * p, c])
    }

    // ----- fused row operations -----

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let cols = *v.shape().last().ok_or_else(|| Error::dim("softmax", "scalar input"))?;
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in row.iter_mut() {
                *e = (*e - max).exp();
                z += *e;
            }
            row.iter_mut().for_each(|e| *e /= z);
        }
        let out = Tensor::new(v.shape(), out)?;
        let rg = self.requires_grad(x);
        self.push(out, Op::Softmax { x, cols }, rg)
    }

    /// Normalizes each row over the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let v = self.value(x);
        let cols = *v.shape().last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        let mut out = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / cols);
        for row in out.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + EPS).sqrt();
            row.iter_mut().for_each(|e| *e = (*e - mean) * is);
            inv_std.push(is);
        }
        let out = Tensor::new(v.shape(), out)?;
        let rg = self.requires_grad(x);
        self.push(out, Op::LayerNorm { x, cols, inv_std }, rg)
    }

    /// B-spline basis of every element: `[..] -> [.., G + k]`, inputs clamped to the grid domain.
    pub fn bspline_basis(&mut self, x: Var, grid: &SplineGrid) -> Result<Var> {
        let v = self.value(x);
        let count = grid.basis_count();
        let n = v.numel();
        let mut out = vec![0.0; n * count];
        let rg = self.requires_grad(x);
        let mut deriv = if rg { vec![0.0; n * count] } else { Vec::new() };
        for (i, &xi) in v.data().iter().enumerate() {
            let o = &mut out[i * count..(i + 1) * count];
            if rg {
                grid.eval_into(xi, o, Some(&mut deriv[i * count..(i + 1) * count]));
            } else {
                grid.eval_into(xi, o, None);
            }
        }
        let mut shape = v.shape().to_vec();
        shape.push(count);
        self.push(Tensor::new(&shape, out)?, Op::Basis { x, count, deriv }, rg)
    }

    // ----- reverse pass -----

    /// Gradients of the scalar `loss` with respect to every leaf that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        let mut leaves = HashMap::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { leaves, bindings: self.bindings.clone() });
        }
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, id, g, &mut grads, &mut leaves);
        }
        Ok(Gradients { leaves, bindings: self.bindings.clone() })
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(
        &self,
        node: &Node,
        id: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        leaves: &mut HashMap<Var, Tensor>,
    ) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {
                let t = Tensor::new(node.value.shape(), g).expect("leaf gradient shape");
                leaves.insert(Var(id), t);
            }
            &Op::MatMul { a, b, m, k, n } => {
                if self.requires_grad(a) {
                    let bv = self.value(b).data();
                    let da = self.buf(grads, a).unwrap();
                    kernels::matmul_nt_acc(&g, bv, da, m, n, k);
                }
                if self.requires_grad(b) {
                    let av = self.value(a).data();
                    let db = self.buf(grads, b).unwrap();
                    kernels::matmul_tn_acc(av, &g, db, m, k, n);
                }
            }
            &Op::Linear { x, w, b, rows, cin, cout } => {
                if self.requires_grad(x) {
                    let wv = self.value(w).data();
                    let dx = self.buf(grads, x).unwrap();
                    kernels::matmul_nt_acc(&g, wv, dx, rows, cout, cin);
                }
                if self.requires_grad(w) {
                    let xv = self.value(x).data();
                    let dw = self.buf(grads, w).unwrap();
                    kernels::matmul_tn_acc(xv, &g, dw, rows, cin, cout);
                }
                if let Some(b) = b {
                    if let Some(db) = self.buf(grads, b) {
                        for row in g.chunks(cout) {
                            for (d, gv) in db.iter_mut().zip(row) {
                                *d += gv;
                            }
                        }
                    }
                }
            }
            &Op::Binary { kind, a, b, a_bcast, b_bcast } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let ai = |i: usize| if a_bcast { 0 } else { i };
                let bi = |i: usize| if b_bcast { 0 } else { i };
                if let Some(da) = self.buf(grads, a) {
                    for (i, gv) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add | Binary::Sub => *gv,
                            Binary::Mul => gv * bv[bi(i)],
                            Binary::Div => gv / bv[bi(i)],
                        };
                        da[ai(i)] += d;
                    }
                }
                if let Some(db) = self.buf(grads, b) {
                    for (i, gv) in g.iter().enumerate() {
                        let d = match kind {
                            Binary::Add => *gv,
                            Binary::Sub => -gv,
                            Binary::Mul => gv * av[ai(i)],
                            Binary::Div => -gv * av[ai(i)] / (bv[bi(i)] * bv[bi(i)]),
                        };
                        db[bi(i)] += d;
                    }
                }
            }
            &Op::Unary { kind, x } => {
                let xv = self.value(x).data();
                let dx = self.buf(grads, x).unwrap();
                for i in 0..g.len() {
                    let local = match kind {
                        Unary::Silu => {
                            let s = kernels::sigmoid(xv[i]);
                            s * (1.0 + xv[i] * (1.0 - s))
                        }
                        Unary::Sigmoid => y[i] * (1.0 - y[i]),
                        Unary::Relu => {
                            if xv[i] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    dx[i] += g[i] * local;
                }
            }
            &Op::Scale { x, factor } => {
                let dx = self.buf(grads, x).unwrap();
                for (d, gv) in dx.iter_mut().zip(&g) {
                    *d += gv * factor;
                }
            }
            Op::Reduce { x, map, factor } => {
                let dx = self.buf(grads, *x).unwrap();
                for (d, &o) in dx.iter_mut().zip(map.iter()) {
                    *d += g[o] * factor;
                }
            }
            &Op::Reshape { x } => {
                let dx = self.buf(grads, x).unwrap();
                for (d, gv) in dx.iter_mut().zip(&g) {
                    *d += gv;
                }
            }
            Op::Gather { x, index } => {
                let dx = self.buf(grads, *x).unwrap();
                for (gv, &i) in g.iter().zip(index.iter()) {
                    dx[i] += gv;
                }
            }
            Op::Concat { xs, outer, inners } => {
                let total: usize = inners.iter().sum();
                let mut offset = 0;
                for (&x, &inner) in xs.iter().zip(inners) {
                    if let Some(dx) = self.buf(grads, x) {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + inner];
                            for (d, gv) in dx[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    offset += inner;
                }
            }
            &Op::Softmax { x, cols } => {
                let dx = self.buf(grads, x).unwrap();
                for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, cols, inv_std } => {
                let cols = *cols;
                let dx = self.buf(grads, *x).unwrap();
                for (r, ((yr, gr), dr)) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / cols as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        dr[j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
            }
            Op::Basis { x, count, deriv } => {
                let count = *count;
                let dx = self.buf(grads, *x).unwrap();
                for (i, d) in dx.iter_mut().enumerate() {
                    let s = i * count;
                    *d += g[s..s + count].iter().zip(&deriv[s..s + count]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul { .. } => "matmul",
        Op::Binary { .. } => "elementwise",
        Op::Unary { .. } => "activation",
        Op::Scale { .. } => "scale",
        Op::Reduce { .. } => "reduce",
        Op::Reshape { .. } => "reshape",
        Op::Gather { .. } => "gather",
        Op::Concat { .. } => "concat",
        Op::Linear { .. } => "linear",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Basis { .. } => "bspline_basis",
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    bindings: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.bindings.get(&id).and_then(|v| self.leaves.get(v))
    }

    /// Gradient for `v`, or zeros of `shape` when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
