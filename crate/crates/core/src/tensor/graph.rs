//! Tape of recorded operations and its reverse sweep.
//!
//! A [`Graph`] lives for one forward/backward pass. Parameters enter as
//! leaves bound to a [`ParamStore`] slot; `backward` adds their gradients into
//! the store, so repeated passes accumulate until `ParamStore::zero_grad`.

use crate::directional::householder_jacobian_mu;
use crate::error::{Error, Result};
use crate::special::{beta_inc_inv, beta_inc_inv_da, trigamma};

use super::params::{ParamId, ParamStore};
use super::value::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Div(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Silu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    MeanLast(Var),
    NormLast(Var),
    SoftmaxLast(Var),
    Concat(Vec<Var>, Axis),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    SelectRows(Var, Vec<usize>),
    Rotary { x: Var, cos: Vec<f64>, sin: Vec<f64> },
    BetaQuantile { alpha: Var, slope: Vec<f64> },
    Householder { mu: Var, y: Var },
    KlPowerSpherical { kappa: Var, slope: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Reverse-mode tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, s, &[0, 0])),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a tracked node (after `backward`).
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Tracked input whose gradient is kept on the tape.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect()).expect("same size");
        let tracked = self.tracked(a);
        self.push(out, op, tracked)
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(op_name, self.value(a), self.value(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    fn row_broadcast(&mut self, op_name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.last_dim();
        if vb.len() != cols || vb.rows() > 1 {
            return Err(Error::shape(op_name, va.shape(), vb.shape()));
        }
        let row = vb.data();
        let data = va
            .data()
            .chunks(cols.max(1))
            .flat_map(|r| r.iter().zip(row).map(|(&x, &y)| f(x, y)))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, op, tracked))
    }

    /// `a + b` with `b` a single row repeated across the leading axis.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, b, Op::AddRow(a, b), |x, y| x + y)
    }

    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, b, Op::MulRow(a, b), |x, y| x * y)
    }

    fn col_broadcast(&mut self, op_name: &'static str, a: Var, c: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(c));
        let cols = va.last_dim();
        if vc.last_dim() != 1 || vc.len() != va.rows() {
            return Err(Error::shape(op_name, va.shape(), vc.shape()));
        }
        let data = va
            .data()
            .chunks(cols.max(1))
            .zip(vc.data())
            .flat_map(|(r, &s)| r.iter().map(|&x| (x, s)).collect::<Vec<_>>())
            .map(|(x, s)| f(x, s))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let tracked = self.tracked(a) || self.tracked(c);
        Ok(self.push(out, op, tracked))
    }

    /// Scale row `i` of `a` by `c[i]` (`c` has shape `[rows, 1]`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.col_broadcast("mul_col", a, c, Op::MulCol(a, c), |x, s| x * s)
    }

    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var> {
        self.col_broadcast("div_col", a, c, Op::DivCol(a, c), |x, s| x / s)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = matrix_dims("matmul", self.value(a))?;
        let (k2, m) = matrix_dims("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, m) = matrix_dims("transpose", self.value(a))?;
        let out = transpose_raw(self.value(a).data(), n, m);
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Transpose(a), tracked))
    }

    fn check_domain(&self, op: &'static str, a: Var) -> Result<()> {
        if let Some(x) = self.value(a).data().iter().find(|x| x.is_nan() || **x < 0.0) {
            return Err(Error::domain(op, format!("input {x} outside [0, ∞)")));
        }
        Ok(())
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check_domain("sqrt", a)?;
        Ok(self.unary(a, Op::Sqrt(a), f64::sqrt))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check_domain("log", a)?;
        Ok(self.unary(a, Op::Log(a), f64::ln))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s: f64 = va.data().iter().sum::<f64>() / va.len() as f64;
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Mean(a), tracked)
    }

    fn reduce_last(&mut self, a: Var, op: Op, f: impl Fn(&[f64]) -> f64) -> Var {
        let va = self.value(a);
        let rows = va.rows();
        let data: Vec<f64> = (0..rows).map(|i| f(va.row_slice(i))).collect();
        let tracked = self.tracked(a);
        self.push(Tensor::new(vec![rows, 1], data).expect("rows"), op, tracked)
    }

    /// Sum along the last axis, giving `[rows, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        self.reduce_last(a, Op::SumLast(a), |r| r.iter().sum())
    }

    pub fn mean_last(&mut self, a: Var) -> Var {
        self.reduce_last(a, Op::MeanLast(a), |r| r.iter().sum::<f64>() / r.len() as f64)
    }

    /// ℓ2 norm along the last axis, giving `[rows, 1]`.
    pub fn norm_last(&mut self, a: Var) -> Var {
        self.reduce_last(a, Op::NormLast(a), |r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    pub fn softmax_last(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.last_dim();
        let mut data = Vec::with_capacity(va.len());
        for r in va.data().chunks(cols.max(1)) {
            softmax_row(r, &mut data);
        }
        let out = Tensor::new(va.shape().to_vec(), data).expect("same size");
        let tracked = self.tracked(a);
        self.push(out, Op::SoftmaxLast(a), tracked)
    }

    /// Concatenate 2-D tensors along rows or columns.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidParam("concat of nothing".into()))?;
        let (r0, c0) = matrix_dims("concat", self.value(first))?;
        let mut rows = vec![];
        let mut cols = vec![];
        for &p in parts {
            let (r, c) = matrix_dims("concat", self.value(p))?;
            if (axis == Axis::Cols && r != r0) || (axis == Axis::Rows && c != c0) {
                return Err(Error::shape("concat", self.shape(first), self.shape(p)));
            }
            rows.push(r);
            cols.push(c);
        }
        let (n, m) = match axis {
            Axis::Rows => (rows.iter().sum(), c0),
            Axis::Cols => (r0, cols.iter().sum()),
        };
        let mut data = Vec::with_capacity(n * m);
        match axis {
            Axis::Rows => {
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
            }
            Axis::Cols => {
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(i));
                    }
                }
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Concat(parts.to_vec(), axis), tracked))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = matrix_dims("slice_cols", self.value(a))?;
        if start > end || end > m {
            return Err(Error::shape("slice_cols", &[n, m], &[start, end]));
        }
        let va = self.value(a);
        let data: Vec<f64> = (0..n).flat_map(|i| va.row_slice(i)[start..end].to_vec()).collect();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::new(vec![n, end - start], data)?, Op::SliceCols(a, start), tracked))
    }

    /// Rows `start..end` of a 2-D tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = matrix_dims("slice_rows", self.value(a))?;
        if start > end || end > n {
            return Err(Error::shape("slice_rows", &[n, m], &[start, end]));
        }
        let data = self.value(a).data()[start * m..end * m].to_vec();
        let tracked = self.tracked(a);
        Ok(self.push(Tensor::new(vec![end - start, m], data)?, Op::SliceRows(a, start), tracked))
    }

    /// Gather rows of a table (embedding lookup).
    pub fn select_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = matrix_dims("select_rows", self.value(table))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("select_rows", &[n, m], &[bad]));
        }
        let vt = self.value(table);
        let data: Vec<f64> = idx.iter().flat_map(|&i| vt.row_slice(i).to_vec()).collect();
        let tracked = self.tracked(table);
        Ok(self.push(Tensor::new(vec![idx.len(), m], data)?, Op::SelectRows(table, idx.to_vec()), tracked))
    }

    /// Rotate consecutive column pairs `(x_{2j}, x_{2j+1})` of row `i` by the
    /// angle with cosine `cos[i * m/2 + j]` and sine `sin[i * m/2 + j]`.
    pub fn rotary(&mut self, x: Var, cos: Vec<f64>, sin: Vec<f64>) -> Result<Var> {
        let (n, m) = matrix_dims("rotary", self.value(x))?;
        if m % 2 != 0 || cos.len() != n * m / 2 || sin.len() != cos.len() {
            return Err(Error::shape("rotary", &[n, m], &[cos.len(), sin.len()]));
        }
        let out = rotate_pairs(self.value(x).data(), &cos, &sin, m, false);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Rotary { x, cos, sin }, tracked))
    }

    /// Elementwise quantile `x = I⁻¹_p(α, β)` of Beta(α, β) at fixed
    /// probabilities `p`, differentiable in α.
    pub fn beta_quantile(&mut self, alpha: Var, beta: f64, p: &[f64]) -> Result<Var> {
        let va = self.value(alpha);
        if va.len() != p.len() {
            return Err(Error::shape("beta_quantile", va.shape(), &[p.len()]));
        }
        if let Some(a) = va.data().iter().find(|a| !(**a > 0.0)) {
            return Err(Error::domain("beta_quantile", format!("alpha {a} must be > 0")));
        }
        let xs: Vec<f64> = va.data().iter().zip(p).map(|(&a, &q)| beta_inc_inv(a, beta, q)).collect();
        let slope: Vec<f64> = va.data().iter().zip(&xs).map(|(&a, &x)| beta_inc_inv_da(a, beta, x)).collect();
        let out = Tensor::new(va.shape().to_vec(), xs)?;
        let tracked = self.tracked(alpha);
        Ok(self.push(out, Op::BetaQuantile { alpha, slope }, tracked))
    }

    /// Row-wise Householder map `u_i = H(μ_i) y_i` carrying `e₁` to `μ_i`.
    pub fn householder(&mut self, mu: Var, y: Var) -> Result<Var> {
        same_shape("householder", self.value(mu), self.value(y))?;
        let d = self.value(mu).last_dim();
        let (vm, vy) = (self.value(mu), self.value(y));
        let data: Vec<f64> = (0..vm.rows())
            .flat_map(|i| crate::directional::householder_from_e1(vm.row_slice(i), vy.row_slice(i)))
            .collect();
        let out = Tensor::new(vm.shape().to_vec(), data)?;
        debug_assert_eq!(out.last_dim(), d);
        let tracked = self.tracked(mu) || self.tracked(y);
        Ok(self.push(out, Op::Householder { mu, y }, tracked))
    }

    /// Elementwise closed-form `KL(PS(·, κ) ‖ Unif(S^{d-1}))`.
    pub fn kl_power_spherical(&mut self, kappa: Var, d: usize) -> Result<Var> {
        let vk = self.value(kappa);
        if let Some(k) = vk.data().iter().find(|k| !(**k >= 0.0)) {
            return Err(Error::domain("kl_power_spherical", format!("kappa {k} must be >= 0")));
        }
        let beta = 0.5 * (d as f64 - 1.0);
        let vals: Vec<f64> = vk.data().iter().map(|&k| crate::directional::kl_ps_uniform_closed(d, k)).collect();
        // dKL/dκ = κ (ψ₁(α) − ψ₁(α + β))
        let slope: Vec<f64> = vk
            .data()
            .iter()
            .map(|&k| k * (trigamma(beta + k) - trigamma(2.0 * beta + k)))
            .collect();
        let out = Tensor::new(vk.shape().to_vec(), vals)?;
        let tracked = self.tracked(kappa);
        Ok(self.push(out, Op::KlPowerSpherical { kappa, slope }, tracked))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `store`; node gradients accumulate on the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tracked {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads, store);
            match &mut self.grads[idx] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| s.iter_mut().zip(g).zip(vb).for_each(|((x, gi), bi)| *x += gi * bi));
                acc(*b, &mut |s| s.iter_mut().zip(g).zip(va).for_each(|((x, gi), ai)| *x += gi * ai));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| s.iter_mut().zip(g).zip(vb).for_each(|((x, gi), bi)| *x += gi / bi));
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::AddRow(a, b) => {
                let m = self.nodes[b.0].value.len();
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for r in g.chunks(m) {
                        add_into(s, r);
                    }
                });
            }
            Op::MulRow(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let m = vb.len();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * vb[i % m];
                    }
                });
                acc(*b, &mut |s| {
                    for (i, (gi, ai)) in g.iter().zip(va).enumerate() {
                        s[i % m] += gi * ai;
                    }
                });
            }
            Op::MulCol(a, c) | Op::DivCol(a, c) => {
                let div = matches!(node.op, Op::DivCol(..));
                let (va, vc) = (val(*a), val(*c));
                let m = self.nodes[a.0].value.last_dim();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        let k = vc[i / m];
                        *x += if div { g[i] / k } else { g[i] * k };
                    }
                });
                acc(*c, &mut |s| {
                    for (i, (gi, ai)) in g.iter().zip(va).enumerate() {
                        let k = vc[i / m];
                        s[i / m] += if div { -gi * ai / (k * k) } else { gi * ai };
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, gi)| *x += k * gi)),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::MatMul(a, b) => {
                let (n, k) = dims2(&self.nodes[a.0].value);
                let m = self.nodes[b.0].value.last_dim();
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    // dA = dC Bᵀ
                    let bt = transpose_raw(vb, k, m);
                    add_into(s, &matmul_raw(g, &bt, n, m, k));
                });
                acc(*b, &mut |s| {
                    // dB = Aᵀ dC
                    let at = transpose_raw(va, n, k);
                    add_into(s, &matmul_raw(&at, g, k, n, m));
                });
            }
            Op::Transpose(a) => {
                let (n, m) = dims2(&self.nodes[a.0].value);
                acc(*a, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            s[i * m + j] += g[j * n + i];
                        }
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * 0.5 / out[i];
                }
            }),
            Op::Exp(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / va[i];
                    }
                })
            }
            Op::Powf(a, p) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * p * va[i].powf(p - 1.0);
                    }
                })
            }
            Op::Silu(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        let sg = sigmoid(va[i]);
                        s[i] += g[i] * (sg + va[i] * sg * (1.0 - sg));
                    }
                })
            }
            Op::Softplus(a) => {
                let va = val(*a);
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * sigmoid(va[i]);
                    }
                })
            }
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => acc(*a, &mut |s| {
                let k = g[0] / s.len() as f64;
                s.iter_mut().for_each(|x| *x += k);
            }),
            Op::SumLast(a) | Op::MeanLast(a) => {
                let m = self.nodes[a.0].value.last_dim();
                let k = if matches!(node.op, Op::MeanLast(_)) { 1.0 / m as f64 } else { 1.0 };
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += k * g[i / m];
                    }
                })
            }
            Op::NormLast(a) => {
                let va = val(*a);
                let m = self.nodes[a.0].value.last_dim();
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        let n = out[i / m];
                        if n > 0.0 {
                            *x += g[i / m] * va[i] / n;
                        }
                    }
                })
            }
            Op::SoftmaxLast(a) => {
                let m = node.value.last_dim();
                acc(*a, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(m).zip(out.chunks(m)).zip(g.chunks(m)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, gi)| y * gi).sum();
                        for j in 0..m {
                            sr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                })
            }
            Op::Concat(parts, axis) => {
                let total_cols = node.value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let (r, c) = dims2(&self.nodes[p.0].value);
                    match axis {
                        Axis::Rows => {
                            let start = offset * total_cols;
                            acc(*p, &mut |s| add_into(s, &g[start..start + r * c]));
                            offset += r;
                        }
                        Axis::Cols => {
                            acc(*p, &mut |s| {
                                for i in 0..r {
                                    let src = &g[i * total_cols + offset..i * total_cols + offset + c];
                                    add_into(&mut s[i * c..(i + 1) * c], src);
                                }
                            });
                            offset += c;
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let m = self.nodes[a.0].value.last_dim();
                let w = node.value.last_dim();
                acc(*a, &mut |s| {
                    for (i, gr) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut s[i * m + start..i * m + start + w], gr);
                    }
                })
            }
            Op::SliceRows(a, start) => {
                let m = node.value.last_dim();
                acc(*a, &mut |s| add_into(&mut s[start * m..start * m + g.len()], g))
            }
            Op::SelectRows(t, idx) => {
                let m = node.value.last_dim();
                acc(*t, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut s[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                })
            }
            Op::Rotary { x, cos, sin } => {
                let m = node.value.last_dim();
                let back = rotate_pairs(g, cos, sin, m, true);
                acc(*x, &mut |s| add_into(s, &back))
            }
            Op::BetaQuantile { alpha, slope } => acc(*alpha, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * slope[i];
                }
            }),
            Op::KlPowerSpherical { kappa, slope } => acc(*kappa, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * slope[i];
                }
            }),
            Op::Householder { mu, y } => {
                let d = node.value.last_dim();
                let (vm, vy) = (val(*mu), val(*y));
                acc(*y, &mut |s| {
                    // H is symmetric: ∂L/∂y = H g
                    for (i, sr) in s.chunks_mut(d).enumerate() {
                        let hg = crate::directional::householder_from_e1(&vm[i * d..(i + 1) * d], &g[i * d..(i + 1) * d]);
                        add_into(sr, &hg);
                    }
                });
                acc(*mu, &mut |s| {
                    for (i, sr) in s.chunks_mut(d).enumerate() {
                        let jac = householder_jacobian_mu(&vm[i * d..(i + 1) * d], &vy[i * d..(i + 1) * d]);
                        let gr = &g[i * d..(i + 1) * d];
                        for (j, x) in sr.iter_mut().enumerate() {
                            *x += (0..d).map(|r| gr[r] * jac[r * d + j]).sum::<f64>();
                        }
                    }
                });
            }
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    let m = t.last_dim();
    (t.rows(), m)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub(crate) fn softmax_row(r: &[f64], out: &mut Vec<f64>) {
    let mx = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &x in r {
        let e = (x - mx).exp();
        sum += e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e /= sum;
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        let mut kk = 0;
        while kk + 4 <= k {
            let (a0, a1, a2, a3) = (arow[kk], arow[kk + 1], arow[kk + 2], arow[kk + 3]);
            let b0 = &b[kk * m..(kk + 1) * m];
            let b1 = &b[(kk + 1) * m..(kk + 2) * m];
            let b2 = &b[(kk + 2) * m..(kk + 3) * m];
            let b3 = &b[(kk + 3) * m..(kk + 4) * m];
            for j in 0..m {
                orow[j] += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            kk += 4;
        }
        for kk in kk..k {
            let aik = arow[kk];
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

pub(crate) fn rotate_pairs(x: &[f64], cos: &[f64], sin: &[f64], m: usize, inverse: bool) -> Vec<f64> {
    let half = m / 2;
    let mut out = vec![0.0; x.len()];
    for (i, (xr, or)) in x.chunks(m).zip(out.chunks_mut(m)).enumerate() {
        for j in 0..half {
            let (c, s) = (cos[i * half + j], if inverse { -sin[i * half + j] } else { sin[i * half + j] });
            let (x0, x1) = (xr[2 * j], xr[2 * j + 1]);
            or[2 * j] = x0 * c - x1 * s;
            or[2 * j + 1] = x0 * s + x1 * c;
        }
    }
    out
}
