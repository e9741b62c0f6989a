//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records a closed set of matrix operations in topological order
//! and replays them backwards to accumulate adjoints. The same operations are
//! available without recording through [`Eval`]; network code is written once
//! against the [`Graph`] trait and runs on either.
//!
//! Forward values on a tape come from the same kernels `Eval` calls, so taped
//! and untaped evaluation agree bit for bit.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::densities::DensityModel;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, DenseMatrix};

/// Elementwise nonlinearity `σ` with its antiderivative and derivatives.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Softplus,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        })
    }
}

/// Which member of the `σ̃, σ, σ′, σ″` family an elementwise node computes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Order {
    Antiderivative,
    Value,
    First,
    Second,
}

impl Order {
    fn next(self) -> Option<Order> {
        match self {
            Order::Antiderivative => Some(Order::Value),
            Order::Value => Some(Order::First),
            Order::First => Some(Order::Second),
            Order::Second => None,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inv(y: f64) -> f64 {
    // log(e^y - 1) = y + log(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}

fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl Activation {
    pub fn has_antiderivative(self) -> bool {
        !matches!(self, Activation::Softplus)
    }

    /// Evaluates one member of the family. The softplus antiderivative has
    /// no elementary closed form and yields an error.
    pub fn eval(self, order: Order, x: f64) -> Result<f64> {
        Ok(match (self, order) {
            (Activation::Tanh, Order::Antiderivative) => log_cosh(x),
            (Activation::Tanh, Order::Value) => x.tanh(),
            (Activation::Tanh, Order::First) => {
                let t = x.tanh();
                1.0 - t * t
            }
            (Activation::Tanh, Order::Second) => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            (Activation::Sigmoid, Order::Antiderivative) => softplus(x),
            (Activation::Sigmoid, Order::Value) => sigmoid(x),
            (Activation::Sigmoid, Order::First) => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            (Activation::Sigmoid, Order::Second) => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            (Activation::Softplus, Order::Antiderivative) => {
                return Err(Error::UnsupportedActivation(self))
            }
            (Activation::Softplus, Order::Value) => softplus(x),
            (Activation::Softplus, Order::First) => sigmoid(x),
            (Activation::Softplus, Order::Second) => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        })
    }
}

/// Pointwise loss applied to a residual.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PointLoss {
    /// `r²`
    Squared,
    /// `½r²` inside `|r| ≤ delta`, linear outside.
    Huber { delta: f64 },
}

impl PointLoss {
    fn value(self, r: f64) -> f64 {
        match self {
            PointLoss::Squared => r * r,
            PointLoss::Huber { delta } => {
                if r.abs() <= delta {
                    0.5 * r * r
                } else {
                    delta * (r.abs() - 0.5 * delta)
                }
            }
        }
    }

    fn derivative(self, r: f64) -> f64 {
        match self {
            PointLoss::Squared => 2.0 * r,
            PointLoss::Huber { delta } => r.clamp(-delta, delta),
        }
    }
}

/// Forward kernels shared by [`Tape`] and [`Eval`].
pub mod kernels {
    use super::*;

    pub fn scale(s: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(x.scaled(s.to_scalar()?))
    }

    pub fn elementwise(x: &DenseMatrix, act: Activation, order: Order) -> Result<DenseMatrix> {
        if order == Order::Antiderivative && !act.has_antiderivative() {
            return Err(Error::UnsupportedActivation(act));
        }
        Ok(x.map(|v| act.eval(order, v).expect("checked above")))
    }

    pub fn diag_embed(v: &DenseMatrix) -> Result<DenseMatrix> {
        if v.cols() != 1 && v.rows() != 1 {
            return Err(shape_err("diag_embed", format!("{}x{} is not a vector", v.rows(), v.cols())));
        }
        Ok(DenseMatrix::from_diag(v.as_slice()))
    }

    /// Lower-triangular factor with a softplus-positive diagonal.
    pub fn lower_factor(raw: &DenseMatrix) -> Result<DenseMatrix> {
        if !raw.is_square() {
            return Err(shape_err("lower_factor", format!("{}x{}", raw.rows(), raw.cols())));
        }
        let n = raw.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = raw[(i, j)];
            }
            l[(i, i)] = softplus(raw[(i, i)]);
        }
        Ok(l)
    }

    pub fn logdet_spd(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        let l = linalg::cholesky(a)?;
        let v = linalg::logdet_from_cholesky(&l);
        Ok((DenseMatrix::scalar(v), l))
    }

    pub fn square(x: &DenseMatrix) -> DenseMatrix {
        x.map(|v| v * v)
    }

    pub fn point_loss(x: &DenseMatrix, loss: PointLoss) -> DenseMatrix {
        x.map(|v| loss.value(v))
    }

    pub fn softmax(x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != 1 && x.rows() != 1 {
            return Err(shape_err("softmax", format!("{}x{} is not a vector", x.rows(), x.cols())));
        }
        let max = x.as_slice().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let e = x.map(|v| (v - max).exp());
        let z = e.sum();
        Ok(e.scaled(1.0 / z))
    }

    pub fn mean(x: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::scalar(x.sum() / x.len() as f64)
    }

    pub fn stack(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(parts.len());
        for p in parts {
            data.push(p.to_scalar()?);
        }
        Ok(DenseMatrix::column(data))
    }

    pub fn element(x: &DenseMatrix, index: usize) -> Result<DenseMatrix> {
        x.as_slice()
            .get(index)
            .map(|&v| DenseMatrix::scalar(v))
            .ok_or_else(|| shape_err("element", format!("index {index} of {} entries", x.len())))
    }

    pub fn log_density(model: &DensityModel, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(DenseMatrix::scalar(model.log_density_slice(x.as_slice())?))
    }
}

/// Operations a network can be written against. Implemented by the recording
/// [`Tape`] and the direct evaluator [`Eval`].
pub trait Graph {
    type Var: Clone;

    fn constant(&mut self, value: DenseMatrix) -> Self::Var;
    /// A trainable input. Recorded as a gradient-tracking leaf on a tape.
    fn param(&mut self, value: &DenseMatrix) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a DenseMatrix;

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scalar_mul(&mut self, c: f64, a: &Self::Var) -> Result<Self::Var>;
    /// `s · x` with a `1 x 1` variable `s`.
    fn scale(&mut self, s: &Self::Var, x: &Self::Var) -> Result<Self::Var>;
    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn transpose(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn elementwise(&mut self, x: &Self::Var, act: Activation, order: Order) -> Result<Self::Var>;
    fn diag_embed(&mut self, v: &Self::Var) -> Result<Self::Var>;
    /// `Wᵀ·diag(s)·W`.
    fn weighted_gram(&mut self, w: &Self::Var, s: &Self::Var) -> Result<Self::Var>;
    fn lower_factor(&mut self, raw: &Self::Var) -> Result<Self::Var>;
    fn logdet_spd(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn sum(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn square(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn point_loss(&mut self, a: &Self::Var, loss: PointLoss) -> Result<Self::Var>;
    fn softmax(&mut self, a: &Self::Var) -> Result<Self::Var>;
    fn mean(&mut self, a: &Self::Var) -> Result<Self::Var>;
    /// Stacks `1 x 1` variables into a column.
    fn stack(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    fn element(&mut self, a: &Self::Var, index: usize) -> Result<Self::Var>;
    fn log_density(&mut self, model: &Arc<DensityModel>, x: &Self::Var) -> Result<Self::Var>;
}

/// Direct evaluation: every variable is a plain matrix.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Graph for Eval {
    type Var = DenseMatrix;

    fn constant(&mut self, value: DenseMatrix) -> DenseMatrix {
        value
    }
    fn param(&mut self, value: &DenseMatrix) -> DenseMatrix {
        value.clone()
    }
    fn value<'a>(&'a self, v: &'a DenseMatrix) -> &'a DenseMatrix {
        v
    }
    fn add(&mut self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        a.add(b)
    }
    fn sub(&mut self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        a.sub(b)
    }
    fn scalar_mul(&mut self, c: f64, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(a.scaled(c))
    }
    fn scale(&mut self, s: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
        kernels::scale(s, x)
    }
    fn matmul(&mut self, a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
        a.matmul(b)
    }
    fn transpose(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(a.transpose())
    }
    fn elementwise(&mut self, x: &DenseMatrix, act: Activation, order: Order) -> Result<DenseMatrix> {
        kernels::elementwise(x, act, order)
    }
    fn diag_embed(&mut self, v: &DenseMatrix) -> Result<DenseMatrix> {
        kernels::diag_embed(v)
    }
    fn weighted_gram(&mut self, w: &DenseMatrix, s: &DenseMatrix) -> Result<DenseMatrix> {
        linalg::weighted_gram(w, s)
    }
    fn lower_factor(&mut self, raw: &DenseMatrix) -> Result<DenseMatrix> {
        kernels::lower_factor(raw)
    }
    fn logdet_spd(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(kernels::logdet_spd(a)?.0)
    }
    fn sum(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(DenseMatrix::scalar(a.sum()))
    }
    fn square(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(kernels::square(a))
    }
    fn point_loss(&mut self, a: &DenseMatrix, loss: PointLoss) -> Result<DenseMatrix> {
        Ok(kernels::point_loss(a, loss))
    }
    fn softmax(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        kernels::softmax(a)
    }
    fn mean(&mut self, a: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(kernels::mean(a))
    }
    fn stack(&mut self, parts: &[DenseMatrix]) -> Result<DenseMatrix> {
        let refs: Vec<&DenseMatrix> = parts.iter().collect();
        kernels::stack(&refs)
    }
    fn element(&mut self, a: &DenseMatrix, index: usize) -> Result<DenseMatrix> {
        kernels::element(a, index)
    }
    fn log_density(&mut self, model: &Arc<DensityModel>, x: &DenseMatrix) -> Result<DenseMatrix> {
        kernels::log_density(model, x)
    }
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeRef {
    tape: u64,
    index: usize,
}

impl NodeRef {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    ScalarMul(usize, f64),
    Scale { scalar: usize, x: usize },
    Matmul(usize, usize),
    Transpose(usize),
    Elementwise { x: usize, act: Activation, order: Order },
    DiagEmbed(usize),
    WeightedGram { w: usize, s: usize },
    LowerFactor(usize),
    /// Keeps the Cholesky factor of the input for the backward pass.
    LogdetSpd { x: usize, factor: DenseMatrix },
    Sum(usize),
    Square(usize),
    PointLoss { x: usize, loss: PointLoss },
    Softmax(usize),
    Mean(usize),
    Stack(Vec<usize>),
    Element { x: usize, index: usize },
    LogDensity { x: usize, model: Arc<DensityModel> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
    /// True when some gradient-tracking leaf reaches this node.
    tracked: bool,
}

/// Append-only record of matrix operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    adjoints: Vec<Option<DenseMatrix>>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            adjoints: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and adjoint. Outstanding [`NodeRef`]s become invalid.
    pub fn reset(&mut self) {
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.adjoints.clear();
        self.backward_done = false;
    }

    pub fn leaf(&mut self, value: DenseMatrix, requires_grad: bool) -> NodeRef {
        debug_assert!(value.is_finite(), "leaf values must be finite");
        self.push(Op::Leaf, value, requires_grad)
    }

    fn push(&mut self, op: Op, value: DenseMatrix, tracked: bool) -> NodeRef {
        let index = self.nodes.len();
        self.nodes.push(Node { op, value, tracked });
        NodeRef { tape: self.id, index }
    }

    fn idx(&self, r: NodeRef) -> Result<usize> {
        if r.tape != self.id || r.index >= self.nodes.len() {
            return Err(Error::ForeignNode);
        }
        Ok(r.index)
    }

    fn tracked(&self, i: usize) -> bool {
        self.nodes[i].tracked
    }

    pub fn get(&self, r: NodeRef) -> Result<&DenseMatrix> {
        Ok(&self.nodes[self.idx(r)?].value)
    }

    /// Adjoint of `r` after [`Tape::backward`]; `None` when no gradient flowed.
    pub fn grad(&self, r: NodeRef) -> Option<&DenseMatrix> {
        let i = self.idx(r).ok()?;
        self.adjoints.get(i).and_then(|a| a.as_ref())
    }

    /// Adjoint of `r`, or zeros shaped like its value.
    pub fn grad_or_zeros(&self, r: NodeRef) -> Result<DenseMatrix> {
        let i = self.idx(r)?;
        Ok(match self.adjoints.get(i).and_then(|a| a.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let (rows, cols) = self.nodes[i].value.shape();
                DenseMatrix::zeros(rows, cols)
            }
        })
    }

    pub fn backward(&mut self, root: NodeRef) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        let root = self.idx(root)?;
        let (r, c) = self.nodes[root].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarRoot(r, c));
        }
        self.backward_done = true;
        self.adjoints = vec![None; self.nodes.len()];
        self.adjoints[root] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=root).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = self.adjoints[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.adjoints[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, contribution: DenseMatrix) -> Result<()> {
        if !self.nodes[target].tracked {
            return Ok(());
        }
        match &mut self.adjoints[target] {
            Some(acc) => acc.axpy(1.0, &contribution),
            slot @ None => {
                *slot = Some(contribution);
                Ok(())
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &DenseMatrix) -> Result<()> {
        // Taken out for the duration so that `self` stays borrowable.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(i, &op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, i: usize, op: &Op, g: &DenseMatrix) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.clone())?;
                self.accumulate(b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone())?;
                self.accumulate(b, g.scaled(-1.0))?;
            }
            Op::ScalarMul(a, c) => self.accumulate(a, g.scaled(c))?,
            Op::Scale { scalar, x } => {
                let s = self.nodes[scalar].value.to_scalar()?;
                if self.tracked(scalar) {
                    let ds = g.hadamard(&self.nodes[x].value)?.sum();
                    self.accumulate(scalar, DenseMatrix::scalar(ds))?;
                }
                self.accumulate(x, g.scaled(s))?;
            }
            Op::Matmul(a, b) => {
                if self.tracked(a) {
                    let da = linalg::matmul_nt(g, &self.nodes[b].value)?;
                    self.accumulate(a, da)?;
                }
                if self.tracked(b) {
                    let db = linalg::matmul_tn(&self.nodes[a].value, g)?;
                    self.accumulate(b, db)?;
                }
            }
            Op::Transpose(a) => self.accumulate(a, g.transpose())?,
            Op::Elementwise { x, act, order } => {
                let next = order
                    .next()
                    .ok_or_else(|| Error::InvalidArgument("σ″ nodes are not differentiable".into()))?;
                let d = match (act, order) {
                    // σ′ from the stored output, saving a transcendental call.
                    (Activation::Tanh, Order::Value) => self.nodes[i].value.map(|y| 1.0 - y * y),
                    (Activation::Sigmoid, Order::Value) => self.nodes[i].value.map(|y| y * (1.0 - y)),
                    _ => kernels::elementwise(&self.nodes[x].value, act, next)?,
                };
                self.accumulate(x, g.hadamard(&d)?)?;
            }
            Op::DiagEmbed(v) => {
                let (rows, cols) = self.nodes[v].value.shape();
                let dv = DenseMatrix::from_vec(rows, cols, g.diagonal())?;
                self.accumulate(v, dv)?;
            }
            Op::WeightedGram { w, s } => {
                let wv = &self.nodes[w].value;
                let sv = &self.nodes[s].value;
                let (k, d) = wv.shape();
                let gsym = g.add(&g.transpose())?;
                let ds = if self.tracked(s) {
                    let mut ds = DenseMatrix::zeros(sv.rows(), sv.cols());
                    let gw = wv.matmul(g)?;
                    for r in 0..k {
                        let row = wv.row(r);
                        ds.as_mut_slice()[r] =
                            gw.row(r).iter().zip(row).map(|(a, b)| a * b).sum();
                    }
                    Some(ds)
                } else {
                    None
                };
                let dw = if self.tracked(w) {
                    let mut dw = wv.matmul(&gsym)?;
                    for r in 0..k {
                        let f = sv.as_slice()[r];
                        for c in 0..d {
                            dw[(r, c)] *= f;
                        }
                    }
                    Some(dw)
                } else {
                    None
                };
                if let Some(ds) = ds {
                    self.accumulate(s, ds)?;
                }
                if let Some(dw) = dw {
                    self.accumulate(w, dw)?;
                }
            }
            Op::LowerFactor(raw) => {
                let rv = &self.nodes[raw].value;
                let n = rv.rows();
                let mut dr = DenseMatrix::zeros(n, n);
                for r in 0..n {
                    for c in 0..r {
                        dr[(r, c)] = g[(r, c)];
                    }
                    dr[(r, r)] = g[(r, r)] * sigmoid(rv[(r, r)]);
                }
                self.accumulate(raw, dr)?;
            }
            Op::LogdetSpd { x, ref factor } => {
                let inv = linalg::spd_inverse_from_cholesky(factor)?;
                self.accumulate(x, inv.scaled(g.to_scalar()?))?;
            }
            Op::Sum(a) => {
                let (r, c) = self.nodes[a].value.shape();
                self.accumulate(a, DenseMatrix::filled(r, c, g.to_scalar()?))?;
            }
            Op::Square(a) => {
                let d = self.nodes[a].value.scaled(2.0).hadamard(g)?;
                self.accumulate(a, d)?;
            }
            Op::PointLoss { x, loss } => {
                let d = self.nodes[x].value.map(|v| loss.derivative(v)).hadamard(g)?;
                self.accumulate(x, d)?;
            }
            Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let dot: f64 = y.as_slice().iter().zip(g.as_slice()).map(|(p, q)| p * q).sum();
                let d = y.hadamard(&g.map(|v| v - dot))?;
                self.accumulate(a, d)?;
            }
            Op::Mean(a) => {
                let (r, c) = self.nodes[a].value.shape();
                let v = g.to_scalar()? / (r * c) as f64;
                self.accumulate(a, DenseMatrix::filled(r, c, v))?;
            }
            Op::Stack(ref parts) => {
                for (k, &p) in parts.iter().enumerate() {
                    self.accumulate(p, DenseMatrix::scalar(g.as_slice()[k]))?;
                }
            }
            Op::Element { x, index } => {
                let (r, c) = self.nodes[x].value.shape();
                let mut d = DenseMatrix::zeros(r, c);
                d.as_mut_slice()[index] = g.to_scalar()?;
                self.accumulate(x, d)?;
            }
            Op::LogDensity { x, ref model } => {
                let xv = &self.nodes[x].value;
                let score = model.score_slice(xv.as_slice())?;
                let d = DenseMatrix::from_vec(xv.rows(), xv.cols(), score)?.scaled(g.to_scalar()?);
                self.accumulate(x, d)?;
            }
        }
        Ok(())
    }

    fn unary(&mut self, a: NodeRef, f: impl FnOnce(&DenseMatrix) -> Result<DenseMatrix>, op: impl FnOnce(usize) -> Op) -> Result<NodeRef> {
        let ia = self.idx(a)?;
        let value = f(&self.nodes[ia].value)?;
        let tracked = self.tracked(ia);
        Ok(self.push(op(ia), value, tracked))
    }

    fn binary(
        &mut self,
        a: NodeRef,
        b: NodeRef,
        f: impl FnOnce(&DenseMatrix, &DenseMatrix) -> Result<DenseMatrix>,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<NodeRef> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let value = f(&self.nodes[ia].value, &self.nodes[ib].value)?;
        let tracked = self.tracked(ia) || self.tracked(ib);
        Ok(self.push(op(ia, ib), value, tracked))
    }
}

impl Graph for Tape {
    type Var = NodeRef;

    fn constant(&mut self, value: DenseMatrix) -> NodeRef {
        self.leaf(value, false)
    }
    fn param(&mut self, value: &DenseMatrix) -> NodeRef {
        self.leaf(value.clone(), true)
    }
    fn value<'a>(&'a self, v: &'a NodeRef) -> &'a DenseMatrix {
        self.get(*v).expect("node from another tape")
    }
    fn add(&mut self, a: &NodeRef, b: &NodeRef) -> Result<NodeRef> {
        self.binary(*a, *b, |x, y| x.add(y), Op::Add)
    }
    fn sub(&mut self, a: &NodeRef, b: &NodeRef) -> Result<NodeRef> {
        self.binary(*a, *b, |x, y| x.sub(y), Op::Sub)
    }
    fn scalar_mul(&mut self, c: f64, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(x.scaled(c)), |i| Op::ScalarMul(i, c))
    }
    fn scale(&mut self, s: &NodeRef, x: &NodeRef) -> Result<NodeRef> {
        self.binary(*s, *x, kernels::scale, |scalar, x| Op::Scale { scalar, x })
    }
    fn matmul(&mut self, a: &NodeRef, b: &NodeRef) -> Result<NodeRef> {
        self.binary(*a, *b, |x, y| x.matmul(y), Op::Matmul)
    }
    fn transpose(&mut self, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(x.transpose()), Op::Transpose)
    }
    fn elementwise(&mut self, x: &NodeRef, act: Activation, order: Order) -> Result<NodeRef> {
        self.unary(*x, |v| kernels::elementwise(v, act, order), |x| Op::Elementwise { x, act, order })
    }
    fn diag_embed(&mut self, v: &NodeRef) -> Result<NodeRef> {
        self.unary(*v, kernels::diag_embed, Op::DiagEmbed)
    }
    fn weighted_gram(&mut self, w: &NodeRef, s: &NodeRef) -> Result<NodeRef> {
        self.binary(*w, *s, linalg::weighted_gram, |w, s| Op::WeightedGram { w, s })
    }
    fn lower_factor(&mut self, raw: &NodeRef) -> Result<NodeRef> {
        self.unary(*raw, kernels::lower_factor, Op::LowerFactor)
    }
    fn logdet_spd(&mut self, a: &NodeRef) -> Result<NodeRef> {
        let ia = self.idx(*a)?;
        let (value, factor) = kernels::logdet_spd(&self.nodes[ia].value)?;
        let tracked = self.tracked(ia);
        Ok(self.push(Op::LogdetSpd { x: ia, factor }, value, tracked))
    }
    fn sum(&mut self, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(DenseMatrix::scalar(x.sum())), Op::Sum)
    }
    fn square(&mut self, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(kernels::square(x)), Op::Square)
    }
    fn point_loss(&mut self, a: &NodeRef, loss: PointLoss) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(kernels::point_loss(x, loss)), |x| Op::PointLoss { x, loss })
    }
    fn softmax(&mut self, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, kernels::softmax, Op::Softmax)
    }
    fn mean(&mut self, a: &NodeRef) -> Result<NodeRef> {
        self.unary(*a, |x| Ok(kernels::mean(x)), Op::Mean)
    }
    fn stack(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        let idx = parts.iter().map(|p| self.idx(*p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DenseMatrix> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = kernels::stack(&refs)?;
        let tracked = idx.iter().any(|&i| self.tracked(i));
        Ok(self.push(Op::Stack(idx), value, tracked))
    }
    fn element(&mut self, a: &NodeRef, index: usize) -> Result<NodeRef> {
        self.unary(*a, |x| kernels::element(x, index), |x| Op::Element { x, index })
    }
    fn log_density(&mut self, model: &Arc<DensityModel>, x: &NodeRef) -> Result<NodeRef> {
        let m = Arc::clone(model);
        self.unary(*x, |v| kernels::log_density(model, v), move |x| Op::LogDensity { x, model: m })
    }
}
