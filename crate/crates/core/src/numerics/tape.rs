//! Dynamic reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Tape::backward`] is a single reverse sweep. A fresh tape is
//! built for every training step.

use std::cell::RefCell;

use super::linalg::{Cholesky, Lu};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    LogCosh(usize),
    Relu(usize),
    Powf(usize, f64),
    ClampMin(usize, f64),
    RowSoftmax(usize),
    RowLogSoftmax(usize),
    RowNormalize(usize, Vec<f64>),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Diag(usize),
    DiagExtract(usize),
    LogDet(usize, Box<Cholesky>),
    Solve(usize, usize, Box<Lu>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. Not `Sync`; each thread builds its own tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{}({r}x{c})", self.id)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the output with respect to `var`; zero when `var` does
    /// not influence the output.
    pub fn wrt(&self, var: Var<'_>) -> Matrix {
        match &self.grads[var.id] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.id];
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Trainable leaf.
    pub fn var(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, f: impl FnOnce(&Matrix) -> (Matrix, Op)) -> Var<'_> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value)
        };
        let rg = self.requires(&[a]);
        self.push(value, op, rg)
    }

    fn try_unary(&self, a: usize, f: impl FnOnce(&Matrix) -> Result<(Matrix, Op)>) -> Result<Var<'_>> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value)?
        };
        let rg = self.requires(&[a]);
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<(Matrix, Op)>,
    ) -> Result<Var<'_>> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)?
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Reverse sweep from a 1x1 output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.shape() != (1, 1) {
            let (r, c) = out.value.shape();
            return Err(Error::shape("backward", format!("output must be 1x1, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[output.id] = Some(Matrix::ones(1, 1));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop(&nodes, id, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Matrix>], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let mut acc = |i: usize, gi: Matrix| accumulate(nodes, grads, i, gi);
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                acc(*a, g.matmul(&val(*b).transpose())?);
            }
            if nodes[*b].requires_grad {
                acc(*b, val(*a).transpose().matmul(g)?);
            }
        }
        Op::Add(a, b) => {
            acc(*a, g.clone());
            acc(*b, g.clone());
        }
        Op::Sub(a, b) => {
            acc(*a, g.clone());
            acc(*b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                acc(*a, g.hadamard(val(*b))?);
            }
            if nodes[*b].requires_grad {
                acc(*b, g.hadamard(val(*a))?);
            }
        }
        Op::AddRow(a, b) => {
            acc(*a, g.clone());
            let mut gb = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                    *o += v;
                }
            }
            acc(*b, gb);
        }
        Op::MulCol(a, v) => {
            let (av, vv) = (val(*a), val(*v));
            if nodes[*a].requires_grad {
                acc(*a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * vv.get(i, 0))?);
            }
            if nodes[*v].requires_grad {
                let gv: Vec<f64> = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                    .collect();
                acc(*v, Matrix::column(&gv)?);
            }
        }
        Op::MulRow(a, v) => {
            let (av, vv) = (val(*a), val(*v));
            if nodes[*a].requires_grad {
                acc(*a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * vv.get(0, j))?);
            }
            if nodes[*v].requires_grad {
                let mut gv = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        gv.as_mut_slice()[j] += g.get(i, j) * av.get(i, j);
                    }
                }
                acc(*v, gv);
            }
        }
        Op::Scale(a, s) => acc(*a, g.scale(*s)),
        Op::AddScalar(a) => acc(*a, g.clone()),
        Op::Exp(a) => acc(*a, g.hadamard(out)?),
        Op::Log(a) => acc(*a, g.zip_map(val(*a), "log'", |gi, x| gi / x)?),
        Op::Tanh(a) => acc(*a, g.zip_map(out, "tanh'", |gi, t| gi * (1.0 - t * t))?),
        Op::LogCosh(a) => acc(*a, g.zip_map(val(*a), "logcosh'", |gi, x| gi * x.tanh())?),
        Op::Relu(a) => acc(*a, g.zip_map(val(*a), "relu'", |gi, x| if x > 0.0 { gi } else { 0.0 })?),
        Op::Powf(a, p) => {
            let p = *p;
            acc(*a, g.zip_map(val(*a), "powf'", |gi, x| gi * p * x.powf(p - 1.0))?)
        }
        Op::ClampMin(a, lo) => {
            let lo = *lo;
            acc(*a, g.zip_map(val(*a), "clamp'", |gi, x| if x >= lo { gi } else { 0.0 })?)
        }
        Op::RowSoftmax(a) => {
            let mut ga = Matrix::zeros(g.rows(), g.cols());
            for i in 0..g.rows() {
                let (gr, sr) = (g.row(i), out.row(i));
                let dot: f64 = gr.iter().zip(sr).map(|(x, y)| x * y).sum();
                for (o, (gi, si)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(sr)) {
                    *o = si * (gi - dot);
                }
            }
            acc(*a, ga);
        }
        Op::RowLogSoftmax(a) => {
            let mut ga = Matrix::zeros(g.rows(), g.cols());
            for i in 0..g.rows() {
                let (gr, lr) = (g.row(i), out.row(i));
                let total: f64 = gr.iter().sum();
                for (o, (gi, li)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(lr)) {
                    *o = gi - li.exp() * total;
                }
            }
            acc(*a, ga);
        }
        Op::RowNormalize(a, norms) => {
            let mut ga = Matrix::zeros(g.rows(), g.cols());
            for i in 0..g.rows() {
                let (gr, yr) = (g.row(i), out.row(i));
                let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                for (o, (gi, yi)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(yr)) {
                    *o = (gi - yi * dot) / norms[i];
                }
            }
            acc(*a, ga);
        }
        Op::Transpose(a) => acc(*a, g.transpose()),
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            acc(*a, Matrix::filled(r, c, g.get(0, 0)));
        }
        Op::Mean(a) => {
            let (r, c) = val(*a).shape();
            acc(*a, Matrix::filled(r, c, g.get(0, 0) / (r * c) as f64));
        }
        Op::RowSum(a) => {
            let (r, c) = val(*a).shape();
            acc(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0))?);
        }
        Op::Diag(a) => {
            let (r, c) = val(*a).shape();
            let d: Vec<f64> = (0..g.rows()).map(|i| g.get(i, i)).collect();
            acc(*a, Matrix::new(r, c, d)?);
        }
        Op::DiagExtract(a) => {
            let n = g.rows();
            let mut ga = Matrix::zeros(n, n);
            for i in 0..n {
                ga.set(i, i, g.get(i, 0));
            }
            acc(*a, ga);
        }
        Op::LogDet(a, chol) => {
            acc(*a, chol.inverse()?.scale(g.get(0, 0)));
        }
        Op::Solve(a, b, lu) => {
            let gb = lu.solve_transposed(g)?;
            if nodes[*a].requires_grad {
                acc(*a, gb.matmul(&out.transpose())?.scale(-1.0));
            }
            acc(*b, gb);
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Runs `f` on the value without cloning it.
    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.with_value(|m| m.shape())
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn scalar(&self) -> Result<f64> {
        self.with_value(|m| m.to_scalar())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape
            .binary(self.id, other.id, |a, b| Ok((a.matmul(b)?, Op::MatMul(self.id, other.id))))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape
            .binary(self.id, other.id, |a, b| Ok((a.add(b)?, Op::Add(self.id, other.id))))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape
            .binary(self.id, other.id, |a, b| Ok((a.sub(b)?, Op::Sub(self.id, other.id))))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape
            .binary(self.id, other.id, |a, b| Ok((a.hadamard(b)?, Op::Mul(self.id, other.id))))
    }

    /// Adds a 1 x m row to every row of an n x m matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row);
        self.tape.binary(self.id, row.id, |a, r| {
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::shape("add_row", format!("{:?} + {:?}", a.shape(), r.shape())));
            }
            let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + r.get(0, j))?;
            Ok((out, Op::AddRow(self.id, row.id)))
        })
    }

    /// Scales row `i` by `v[i]` for an n x 1 column `v`.
    pub fn mul_col(self, v: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&v);
        self.tape.binary(self.id, v.id, |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::shape("mul_col", format!("{:?} * {:?}", a.shape(), c.shape())));
            }
            let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * c.get(i, 0))?;
            Ok((out, Op::MulCol(self.id, v.id)))
        })
    }

    /// Scales column `j` by `v[j]` for a 1 x m row `v`.
    pub fn mul_row(self, v: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&v);
        self.tape.binary(self.id, v.id, |a, r| {
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::shape("mul_row", format!("{:?} * {:?}", a.shape(), r.shape())));
            }
            let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) * r.get(0, j))?;
            Ok((out, Op::MulRow(self.id, v.id)))
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.scale(s), Op::Scale(self.id, s)))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(|v| v + s), Op::AddScalar(self.id)))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(f64::exp), Op::Exp(self.id)))
    }

    /// Natural log; every entry must be positive.
    pub fn ln(self) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |a| {
            if let Some(v) = a.as_slice().iter().find(|v| **v <= 0.0) {
                return Err(Error::Degenerate(format!("log of non-positive value {v:e}")));
            }
            Ok((a.map(f64::ln), Op::Log(self.id)))
        })
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(f64::tanh), Op::Tanh(self.id)))
    }

    /// `log(cosh(x))`, evaluated as `|x| + log1p(exp(-2|x|)) - ln 2`.
    pub fn log_cosh(self) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(log_cosh), Op::LogCosh(self.id)))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(|v| v.max(0.0)), Op::Relu(self.id)))
    }

    /// Elementwise power; entries must be positive.
    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |a| {
            if let Some(v) = a.as_slice().iter().find(|v| **v <= 0.0) {
                return Err(Error::Degenerate(format!("powf of non-positive value {v:e}")));
            }
            Ok((a.map(|v| v.powf(p)), Op::Powf(self.id, p)))
        })
    }

    /// `max(x, lo)`; the gradient passes where `x >= lo`.
    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.map(|v| v.max(lo)), Op::ClampMin(self.id, lo)))
    }

    pub fn row_softmax(self) -> Var<'t> {
        self.tape.unary(self.id, |a| {
            let mut out = a.clone();
            for i in 0..out.rows() {
                softmax_in_place(out.row_mut(i));
            }
            (out, Op::RowSoftmax(self.id))
        })
    }

    pub fn row_log_softmax(self) -> Var<'t> {
        self.tape.unary(self.id, |a| {
            let mut out = a.clone();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            (out, Op::RowLogSoftmax(self.id))
        })
    }

    /// Scales each row to unit L2 norm; a zero row is a degenerate input.
    pub fn row_normalize(self) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |a| {
            let norms = a.row_norms();
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                return Err(Error::Degenerate(format!("row {i} has zero norm")));
            }
            let out = Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) / norms[i])?;
            Ok((out, Op::RowNormalize(self.id, norms)))
        })
    }

    pub fn transpose(self) -> Var<'t> {
        self.tape.unary(self.id, |a| (a.transpose(), Op::Transpose(self.id)))
    }

    pub fn sum(self) -> Var<'t> {
        self.tape
            .unary(self.id, |a| (Matrix::filled(1, 1, a.sum()), Op::Sum(self.id)))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(self.id, |a| {
            (Matrix::filled(1, 1, a.sum() / a.len() as f64), Op::Mean(self.id))
        })
    }

    /// n x m to n x 1 row sums.
    pub fn row_sum(self) -> Var<'t> {
        self.tape.unary(self.id, |a| {
            let sums: Vec<f64> = (0..a.rows()).map(|i| a.row(i).iter().sum()).collect();
            (Matrix::from_raw(a.rows(), 1, sums), Op::RowSum(self.id))
        })
    }

    /// Vector (n x 1 or 1 x n) to n x n diagonal matrix.
    pub fn diag(self) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |a| {
            if a.rows() != 1 && a.cols() != 1 {
                return Err(Error::shape("diag", format!("expected a vector, got {:?}", a.shape())));
            }
            Ok((Matrix::diag(a.as_slice())?, Op::Diag(self.id)))
        })
    }

    /// n x n to n x 1 diagonal.
    pub fn diag_extract(self) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |a| {
            if a.rows() != a.cols() {
                return Err(Error::shape("diag_extract", format!("expected square, got {:?}", a.shape())));
            }
            let d: Vec<f64> = (0..a.rows()).map(|i| a.get(i, i)).collect();
            Ok((Matrix::column(&d)?, Op::DiagExtract(self.id)))
        })
    }

    /// `log det(m)` for symmetric positive definite `m`, via Cholesky.
    /// The adjoint is `m⁻¹` (the symmetric gradient).
    pub fn logdet(self) -> Result<Var<'t>> {
        self.tape.try_unary(self.id, |m| {
            let chol = Cholesky::factor(m)?;
            let v = chol.logdet();
            Ok((Matrix::filled(1, 1, v), Op::LogDet(self.id, Box::new(chol))))
        })
    }

    /// `x` with `self · x = rhs`.
    pub fn solve(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&rhs);
        self.tape.binary(self.id, rhs.id, |a, b| {
            let lu = Lu::factor(a)?;
            let x = lu.solve(b)?;
            Ok((x, Op::Solve(self.id, rhs.id, Box::new(lu))))
        })
    }
}

pub(crate) fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{check_gradient, GradCheck};
    use crate::rng::Rng;

    fn assert_check(name: &str, r: GradCheck) {
        assert!(r.passed(1e-4), "{name}: {r:?}");
    }

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let p = tape.var(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let g = tape.backward(p.sum()).unwrap();
        assert_eq!(g.wrt(p), Matrix::ones(2, 2));
    }

    #[test]
    fn half_squared_norm_gives_self() {
        let tape = Tape::new();
        let m = Matrix::from_rows(&[[1.0, -2.0, 4.0]]).unwrap();
        let p = tape.var(m.clone());
        let out = p.mul(p).unwrap().sum().scale(0.5);
        assert_eq!(tape.backward(out).unwrap().wrt(p), m);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let tape = Tape::new();
        let p = tape.var(Matrix::ones(2, 2));
        assert!(matches!(tape.backward(p), Err(Error::Shape { .. })));
    }

    #[test]
    fn unreachable_and_constant_nodes_get_zero() {
        let tape = Tape::new();
        let p = tape.var(Matrix::ones(2, 2));
        let q = tape.var(Matrix::ones(3, 1));
        let c = tape.constant(Matrix::ones(2, 2));
        let out = p.mul(c).unwrap().sum();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.wrt(q), Matrix::zeros(3, 1));
        assert_eq!(g.wrt(c), Matrix::zeros(2, 2));
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(4);
            let tape = Tape::new();
            let p = tape.var(rng.normal_matrix(4, 3));
            let w = tape.constant(rng.normal_matrix(3, 2));
            let out = p.matmul(w).unwrap().row_softmax().ln().unwrap().sum();
            let g = tape.backward(out).unwrap().wrt(p);
            (out.scalar().unwrap().to_bits(), g)
        };
        assert_eq!(run(), run());
    }

    // Each primitive gets a random finite-difference check.
    #[test]
    fn primitive_gradients() {
        let mut rng = Rng::new(21);
        let a = rng.normal_matrix(4, 3);
        let b = rng.normal_matrix(3, 5);
        let c = rng.normal_matrix(4, 3);
        let w = rng.normal_matrix(4, 3);
        let row = rng.normal_matrix(1, 3);
        let col = rng.normal_matrix(4, 1);
        let pos = rng.uniform_matrix(4, 3, 0.5, 2.0);

        macro_rules! check {
            ($name:expr, $x:expr, $f:expr) => {{
                let x: Matrix = $x;
                assert_check($name, check_gradient(&x, 1e-5, $f));
            }};
        }

        // fixed pseudo-random weights make every output entry matter differently
        fn weighted<'t>(t: &'t Tape, v: Var<'t>) -> Result<Var<'t>> {
            let (r, c) = v.shape();
            let w = t.constant(Rng::new(1234).normal_matrix(r, c));
            Ok(v.mul(w)?.sum())
        }

        check!("matmul lhs", a.clone(), |t, v| {
            let bb = t.constant(b.clone());
            weighted(t, v.matmul(bb)?)
        });
        check!("matmul rhs", b.clone(), |t, v| {
            let aa = t.constant(a.clone());
            weighted(t, aa.matmul(v)?)
        });
        check!("add/sub/mul", a.clone(), |t, v| {
            let cc = t.constant(c.clone());
            weighted(t, v.add(cc)?.mul(v.sub(cc)?)?)
        });
        check!("add_row", a.clone(), |t, v| {
            weighted(t, v.add_row(t.constant(row.clone()))?)
        });
        check!("add_row bias", row.clone(), |t, v| {
            weighted(t, t.constant(a.clone()).add_row(v)?)
        });
        check!("mul_col", col.clone(), |t, v| {
            weighted(t, t.constant(a.clone()).mul_col(v)?)
        });
        check!("mul_row", row.clone(), |t, v| {
            weighted(t, t.constant(a.clone()).mul_row(v)?.mul_col(t.constant(col.clone()))?)
        });
        check!("scale/add_scalar/neg", a.clone(), |t, v| {
            weighted(t, v.scale(1.7).add_scalar(0.3).neg())
        });
        check!("exp", a.clone(), |t, v| weighted(t, v.exp()));
        check!("ln", pos.clone(), |t, v| weighted(t, v.ln()?));
        check!("tanh", a.clone(), |t, v| weighted(t, v.tanh()));
        check!("log_cosh", a.scale(3.0), |t, v| weighted(t, v.log_cosh()));
        check!("relu", w.clone(), |t, v| weighted(t, v.relu()));
        check!("powf", pos.clone(), |t, v| weighted(t, v.powf(-0.5)?));
        check!("clamp_min", pos.clone(), |t, v| weighted(t, v.clamp_min(0.1)));
        check!("row_softmax", a.clone(), |t, v| weighted(t, v.row_softmax()));
        check!("row_log_softmax", a.clone(), |t, v| weighted(t, v.row_log_softmax()));
        check!("row_normalize", a.clone(), |t, v| weighted(t, v.row_normalize()?));
        check!("transpose", a.clone(), |t, v| weighted(t, v.transpose()));
        check!("mean", a.clone(), |_t, v| Ok(v.mul(v)?.mean()));
        check!("row_sum", a.clone(), |t, v| weighted(t, v.row_sum()));
        check!("diag", col.clone(), |t, v| weighted(t, v.diag()?));
        check!("diag_extract", rng.normal_matrix(4, 4), |t, v| weighted(t, v.diag_extract()?));
    }

    #[test]
    fn logdet_and_solve_gradients() {
        let mut rng = Rng::new(8);
        for trial in 0..10 {
            let b = rng.normal_matrix(5, 5);
            // m = b bᵀ + I keeps every perturbation symmetric positive definite
            let r = check_gradient(&b, 1e-5, |t, v| {
                let m = v.matmul(v.transpose())?.add(t.constant(Matrix::identity(5)))?;
                m.logdet()
            });
            assert_check(&format!("logdet {trial}"), r);

            let a = rng.normal_matrix(6, 6).add(&Matrix::identity(6).scale(3.0)).unwrap();
            let rhs = rng.normal_matrix(6, 2);
            let wt = rng.normal_matrix(6, 2);
            let ra = check_gradient(&a, 1e-5, |t, v| {
                v.solve(t.constant(rhs.clone()))?.mul(t.constant(wt.clone())).map(|x| x.sum())
            });
            assert_check(&format!("solve lhs {trial}"), ra);
            let rb = check_gradient(&rhs, 1e-5, |t, v| {
                t.constant(a.clone()).solve(v)?.mul(t.constant(wt.clone())).map(|x| x.sum())
            });
            assert_check(&format!("solve rhs {trial}"), rb);
        }
    }

    #[test]
    fn log_cosh_is_stable() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(2.0) - 2f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(-800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
    }
}
