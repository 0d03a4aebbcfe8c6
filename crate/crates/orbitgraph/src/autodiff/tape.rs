//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded as [`TapeNode`]s in an append-only arena; node
//! inputs always point at earlier indices, so the arena order is already
//! topological and a single reverse sweep accumulates every adjoint
//! exactly once. Each node caches its output value, which is all the
//! recomputation data the local gradients need (no closures).

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Handle to a trainable parameter, assigned in registration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Operation kind plus the input node references.
#[derive(Clone, Debug)]
enum Op<T> {
    /// Untracked leaf: gradients stop here.
    Constant,
    /// Tracked leaf owned by `ParamId`.
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Sum of absolute entries; scalar output.
    SumAbs(NodeId),
    /// Sum of squared entries; scalar output.
    SumSquares(NodeId),
    /// Column means collapsed to one row.
    MeanRows(NodeId),
    /// Row vector (1 x d) spread to a (d x cols) matrix, constant along rows.
    SpreadRow(NodeId, usize),
    /// Matrix plus a row vector broadcast down every row.
    AddRowBroadcast(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
}

struct TapeNode<T> {
    op: Op<T>,
    value: Matrix<T>,
}

/// Gradients of a scalar root with respect to every registered parameter,
/// dense and aligned with registration order.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Matrix<T> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix<T>> {
        self.grads.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Matrix<T>> {
        self.grads.iter_mut()
    }

    /// Global L2 norm across every parameter entry.
    pub fn global_norm(&self) -> T {
        self.grads
            .iter()
            .fold(T::zero(), |acc, g| acc + g.sum_squares())
            .sqrt()
    }

    pub fn scale_in_place(&mut self, factor: T) {
        for g in self.grads.iter_mut() {
            *g = g.scale(factor);
        }
    }

    /// Entrywise sum; shapes must agree parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::Contract(format!(
                "gradient accumulate over {} vs {} parameters",
                self.grads.len(),
                other.grads.len()
            )));
        }
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

/// Recording arena for one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<TapeNode<T>>,
    /// Parameter node ids in registration order.
    params: Vec<NodeId>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    /// Scalar payload of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> Result<T> {
        let v = self.value(id);
        if !v.is_scalar() {
            return Err(Error::Contract(format!(
                "expected scalar node, found shape {:?}",
                v.shape()
            )));
        }
        Ok(v.at(0, 0))
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite tape value from {op:?}");
        let id = NodeId(self.nodes.len());
        self.nodes.push(TapeNode { op, value });
        id
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Constant, value)
    }

    /// Tracked leaf; ids are handed out in registration order.
    pub fn param(&mut self, value: Matrix<T>) -> (ParamId, NodeId) {
        let pid = ParamId(self.params.len());
        let nid = self.push(Op::Param, value);
        self.params.push(nid);
        (pid, nid)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.tanh());
        self.push(Op::Tanh(a), value)
    }

    pub fn sum_abs(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).sum_abs());
        self.push(Op::SumAbs(a), value)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).sum_squares());
        self.push(Op::SumSquares(a), value)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).mean_rows();
        self.push(Op::MeanRows(a), value)
    }

    /// Spread a 1 x d row into a d x cols matrix: out[i][j] = row[i].
    pub fn spread_row(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        let row = self.value(a);
        if row.rows() != 1 {
            return Err(Error::Contract(format!(
                "spread_row expects a single row, found shape {:?}",
                row.shape()
            )));
        }
        let d = row.cols();
        let mut value = Matrix::zeros(d, cols);
        for i in 0..d {
            for j in 0..cols {
                value.set(i, j, row.at(0, i));
            }
        }
        Ok(self.push(Op::SpreadRow(a, cols), value))
    }

    /// mat (N x d) + row (1 x d) broadcast to each row.
    pub fn add_row_broadcast(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let m = self.value(mat);
        let r = self.value(row);
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(Error::dimension("add_row_broadcast", m.shape(), r.shape()));
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                value.add_at(i, j, r.at(0, j));
            }
        }
        Ok(self.push(Op::AddRowBroadcast(mat, row), value))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let value = self.value(a).slice_cols(start, len)?;
        Ok(self.push(Op::SliceCols(a, start, len), value))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Reverse accumulation from a scalar root. Returns one gradient per
    /// registered parameter (zeros where the root does not depend on it).
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, found shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adjoints: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        adjoints[root.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=root.0).rev() {
            let Some(grad) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(idx, &grad, &mut adjoints)?;
            // A later node never feeds an earlier one, so this slot is final;
            // keep it only for parameter leaves.
            if matches!(self.nodes[idx].op, Op::Param) {
                adjoints[idx] = Some(grad);
            }
        }

        let grads = self
            .params
            .iter()
            .map(|nid| {
                adjoints[nid.0].take().unwrap_or_else(|| {
                    let shape = self.nodes[nid.0].value.shape();
                    Matrix::zeros(shape.0, shape.1)
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        adjoints: &mut [Option<Matrix<T>>],
        target: NodeId,
        grad: Matrix<T>,
    ) -> Result<()> {
        match &mut adjoints[target.0] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => {
                *slot = Some(grad);
                Ok(())
            }
        }
    }

    fn propagate(
        &self,
        idx: usize,
        grad: &Matrix<T>,
        adjoints: &mut [Option<Matrix<T>>],
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Constant | Op::Param => Ok(()),
            Op::MatMul(a, b) => {
                let da = grad.matmul(&self.value(*b).transpose())?;
                self.accumulate(adjoints, *a, da)?;
                let db = self.value(*a).transpose().matmul(grad)?;
                self.accumulate(adjoints, *b, db)
            }
            Op::Add(a, b) => {
                self.accumulate(adjoints, *a, grad.clone())?;
                self.accumulate(adjoints, *b, grad.clone())
            }
            Op::Sub(a, b) => {
                self.accumulate(adjoints, *a, grad.clone())?;
                self.accumulate(adjoints, *b, grad.scale(-T::one()))
            }
            Op::Hadamard(a, b) => {
                self.accumulate(adjoints, *a, grad.hadamard(self.value(*b))?)?;
                self.accumulate(adjoints, *b, grad.hadamard(self.value(*a))?)
            }
            Op::Scale(a, factor) => self.accumulate(adjoints, *a, grad.scale(*factor)),
            Op::Sigmoid(a) => {
                let local = node.value.map(|y| y * (T::one() - y));
                self.accumulate(adjoints, *a, grad.hadamard(&local)?)
            }
            Op::Tanh(a) => {
                let local = node.value.map(|y| T::one() - y * y);
                self.accumulate(adjoints, *a, grad.hadamard(&local)?)
            }
            Op::SumAbs(a) => {
                let g = grad.at(0, 0);
                // Subgradient 0 at the kink.
                let da = self.value(*a).map(|x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(adjoints, *a, da)
            }
            Op::SumSquares(a) => {
                let g = grad.at(0, 0);
                let two = T::of(2.0);
                let da = self.value(*a).map(|x| two * g * x);
                self.accumulate(adjoints, *a, da)
            }
            Op::MeanRows(a) => {
                let input = self.value(*a);
                let inv = T::one() / T::of_usize(input.rows().max(1));
                let mut da = Matrix::zeros(input.rows(), input.cols());
                for r in 0..input.rows() {
                    for c in 0..input.cols() {
                        da.set(r, c, grad.at(0, c) * inv);
                    }
                }
                self.accumulate(adjoints, *a, da)
            }
            Op::SpreadRow(a, cols) => {
                let input = self.value(*a);
                let mut da = Matrix::zeros(1, input.cols());
                for i in 0..input.cols() {
                    let mut acc = T::zero();
                    for j in 0..*cols {
                        acc += grad.at(i, j);
                    }
                    da.set(0, i, acc);
                }
                self.accumulate(adjoints, *a, da)
            }
            Op::AddRowBroadcast(mat, row) => {
                self.accumulate(adjoints, *mat, grad.clone())?;
                let mut drow = Matrix::zeros(1, grad.cols());
                for j in 0..grad.cols() {
                    let mut acc = T::zero();
                    for i in 0..grad.rows() {
                        acc += grad.at(i, j);
                    }
                    drow.set(0, j, acc);
                }
                self.accumulate(adjoints, *row, drow)
            }
            Op::SliceCols(a, start, len) => {
                let input = self.value(*a);
                let mut da = Matrix::zeros(input.rows(), input.cols());
                for r in 0..grad.rows() {
                    for c in 0..*len {
                        da.set(r, start + c, grad.at(r, c));
                    }
                }
                self.accumulate(adjoints, *a, da)
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for part in parts {
                    let width = self.value(*part).cols();
                    let slice = grad.slice_cols(offset, width)?;
                    self.accumulate(adjoints, *part, slice)?;
                    offset += width;
                }
                Ok(())
            }
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    // Split on sign to avoid overflow in exp.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
