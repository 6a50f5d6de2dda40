//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built fresh for every sentence. Each operation appends a
//! node holding its forward value; [`Graph::backward_into`] walks the nodes in
//! reverse and accumulates exact gradients for every parameter reachable from
//! the loss. Parameters are read from a borrowed [`ParamStore`] without
//! copying.

use crate::crf;
use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{axpy, dot, sigmoid, softmax_into, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which direction a reduction runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize / reduce within each row.
    Row,
    /// Normalize / reduce within each column.
    Column,
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    GatherRows {
        src: Var,
        index: Vec<usize>,
    },
    ScatterRows {
        src: Var,
        offset: usize,
    },
    SumRows(Var),
    SumAll(Var),
    Transpose(Var),
    Pick {
        src: Var,
        index: Vec<(usize, usize)>,
    },
    CrfNll {
        emissions: Var,
        transitions: Var,
        d_emissions: Vec<f64>,
        d_transitions: Vec<f64>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    branches: Vec<usize>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
            branches: Vec::new(),
        }
    }

    /// Records a discrete choice made from a node's value, such as a rounded
    /// window size. Gradients do not flow through these choices.
    pub fn record_branch(&mut self, choice: usize) {
        self.branches.push(choice);
    }

    /// Discrete choices recorded so far, in order.
    pub fn branches(&self) -> &[usize] {
        &self.branches
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).matrix_shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.matrix_shape();
        let (k2, n) = tb.matrix_shape();
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip != 0.0 {
                    axpy(aip, &bd[p * n..(p + 1) * n], row);
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `[m,k] x [n,k]^T -> [m,n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.matrix_shape();
        let (n, k2) = tb.matrix_shape();
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = ta.row_slice(i);
            for j in 0..n {
                out[i * n + j] = dot(ar, tb.row_slice(j));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.matrix_shape() != tb.matrix_shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = vec![ta.rows(), ta.cols()];
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data).expect("shape checked"), op, rg)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let shape = vec![ta.rows(), ta.cols()];
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("same length"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds the row vector `b` (`[1,n]`) to every row of `a` (`[m,n]`).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tb));
        }
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(tb.data()) {
                *x += y;
            }
        }
        let shape = vec![ta.rows(), n];
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, b), rg))
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    /// Multiplies every entry of `a` by the one-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(shape_err("mul_scalar", self.value(a), ts));
        }
        let c = ts.item();
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * c).collect();
        let shape = vec![ta.rows(), ta.cols()];
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulScalar(a, s), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Also records which entries are active, as one hashed branch.
    pub fn relu(&mut self, a: Var) -> Var {
        use std::hash::{Hash, Hasher};
        let mut mask = std::collections::hash_map::DefaultHasher::new();
        for &x in self.value(a).data() {
            (x > 0.0).hash(&mut mask);
        }
        self.record_branch(mask.finish() as usize);
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), f64::ln)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, Op::Recip(a), f64::recip)
    }

    /// Softmax along the chosen axis.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        match axis {
            Axis::Row => self.softmax_rows(a),
            Axis::Column => {
                let t = self.transpose(a);
                let s = self.softmax_rows(t)?;
                Ok(self.transpose(s))
            }
        }
    }

    fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        if n == 0 || m == 0 {
            return Err(Error::EmptyAxis);
        }
        let mut data = vec![0.0; m * n];
        for (src, dst) in ta.data().chunks(n).zip(data.chunks_mut(n)) {
            softmax_into(src, dst);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows(a), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        if n == 0 || m == 0 {
            return Err(Error::EmptyAxis);
        }
        let mut data = vec![0.0; m * n];
        for (src, dst) in ta.data().chunks(n).zip(data.chunks_mut(n)) {
            let lse = crate::tensor::log_sum_exp(src);
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lse;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::LogSoftmaxRows(a), rg))
    }

    /// Row-wise log-sum-exp, `[m,n] -> [m,1]`, with max subtraction.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        if n == 0 {
            return Err(Error::EmptyAxis);
        }
        let data = ta
            .data()
            .chunks(n)
            .map(crate::tensor::log_sum_exp)
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![m, 1], data)?, Op::LogSumExpRows(a), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start+len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, start + len],
            });
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![m, len], data)?,
            Op::SliceCols { src: a, start },
            rg,
        ))
    }

    /// Selects rows by index (duplicates allowed); embedding lookup uses this.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            if i >= m {
                return Err(Error::Shape {
                    op: "gather_rows",
                    lhs: vec![m, n],
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(ta.row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![index.len(), n], data)?,
            Op::GatherRows {
                src: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Places `a` (`[w,n]`) at rows `offset..offset+w` of a zero `[total,n]` matrix.
    pub fn scatter_rows(&mut self, a: Var, offset: usize, total: usize) -> Result<Var> {
        let ta = self.value(a);
        let (w, n) = ta.matrix_shape();
        if offset + w > total {
            return Err(Error::Shape {
                op: "scatter_rows",
                lhs: vec![w, n],
                rhs: vec![offset, total],
            });
        }
        let mut data = vec![0.0; total * n];
        data[offset * n..(offset + w) * n].copy_from_slice(ta.data());
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![total, n], data)?,
            Op::ScatterRows { src: a, offset },
            rg,
        ))
    }

    /// Column sums, `[m,n] -> [1,n]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (_, n) = ta.matrix_shape();
        let mut out = vec![0.0; n];
        for row in ta.data().chunks(n.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::row(out), Op::SumRows(a), rg)
    }

    /// Sum of all entries as a `[1,1]` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![n, m], data).expect("same length"),
            Op::Transpose(a),
            rg,
        )
    }

    /// Gathers individual entries `(row, col)` into a `[1,len]` row.
    pub fn pick(&mut self, a: Var, index: &[(usize, usize)]) -> Result<Var> {
        let ta = self.value(a);
        let (m, n) = ta.matrix_shape();
        let mut out = Vec::with_capacity(index.len());
        for &(r, c) in index {
            if r >= m || c >= n {
                return Err(Error::Shape {
                    op: "pick",
                    lhs: vec![m, n],
                    rhs: vec![r, c],
                });
            }
            out.push(ta.get(r, c));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::row(out),
            Op::Pick {
                src: a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF with the
    /// given emission matrix `[N,d]` and transition table `[d+2,d+2]`.
    pub fn crf_nll(&mut self, emissions: Var, transitions: Var, gold: &[usize]) -> Result<Var> {
        let (em, tr) = (self.value(emissions), self.value(transitions));
        let grad = crf::nll_with_grad(em, tr, gold)?;
        let rg = self.rg(emissions) || self.rg(transitions);
        Ok(self.push(
            Tensor::scalar(grad.nll),
            Op::CrfNll {
                emissions,
                transitions,
                d_emissions: grad.d_emissions,
                d_transitions: grad.d_transitions,
            },
            rg,
        ))
    }

    /// Backpropagates from the scalar `loss` and adds parameter gradients into `grads`.
    pub fn backward_into(&self, loss: Var, grads: &mut Grads) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut g: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gi) = g[i].take() else { continue };
            self.backprop_node(node, Var(i), &gi, &mut g, grads);
        }
        Ok(())
    }

    /// Convenience wrapper returning fresh gradients.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let mut grads = Grads::new(self.store);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    fn buf<'g>(&self, g: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(g[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop_node(
        &self,
        node: &Node,
        me: Var,
        gi: &[f64],
        g: &mut [Option<Vec<f64>>],
        grads: &mut Grads,
    ) {
        let out = self.value(me);
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                let slot = grads.slot_mut(*id, gi.len());
                for (s, x) in slot.iter_mut().zip(gi) {
                    *s += x;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.matrix_shape();
                let n = tb.cols();
                if let Some(da) = self.buf(g, *a) {
                    for i in 0..m {
                        let gr = &gi[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] += dot(gr, &tb.data()[p * n..(p + 1) * n]);
                        }
                    }
                }
                if let Some(db) = self.buf(g, *b) {
                    for i in 0..m {
                        let gr = &gi[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ta.data()[i * k + p];
                            if aip != 0.0 {
                                axpy(aip, gr, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.matrix_shape();
                let n = tb.rows();
                if let Some(da) = self.buf(g, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gi[i * n + j];
                            if gij != 0.0 {
                                axpy(gij, tb.row_slice(j), &mut da[i * k..(i + 1) * k]);
                            }
                        }
                    }
                }
                if let Some(db) = self.buf(g, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = gi[i * n + j];
                            if gij != 0.0 {
                                axpy(gij, ta.row_slice(i), &mut db[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.buf(g, *a) {
                    axpy(1.0, gi, da);
                }
                if let Some(db) = self.buf(g, *b) {
                    axpy(1.0, gi, db);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.buf(g, *a) {
                    axpy(1.0, gi, da);
                }
                if let Some(db) = self.buf(g, *b) {
                    axpy(-1.0, gi, db);
                }
            }
            Op::AddRow(a, b) => {
                if let Some(da) = self.buf(g, *a) {
                    axpy(1.0, gi, da);
                }
                if let Some(db) = self.buf(g, *b) {
                    let n = db.len();
                    for row in gi.chunks(n.max(1)) {
                        axpy(1.0, row, db);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), y) in da.iter_mut().zip(gi).zip(tb.data()) {
                        *d += x * y;
                    }
                }
                if let Some(db) = self.buf(g, *b) {
                    for ((d, x), y) in db.iter_mut().zip(gi).zip(ta.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.buf(g, *a) {
                    axpy(*c, gi, da);
                }
            }
            Op::MulScalar(a, s) => {
                let c = self.value(*s).item();
                let ta = self.value(*a);
                if let Some(da) = self.buf(g, *a) {
                    axpy(c, gi, da);
                }
                if let Some(ds) = self.buf(g, *s) {
                    ds[0] += dot(gi, ta.data());
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), y) in da.iter_mut().zip(gi).zip(out.data()) {
                        *d += x * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), y) in da.iter_mut().zip(gi).zip(out.data()) {
                        *d += x * y * (1.0 - y);
                    }
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), v) in da.iter_mut().zip(gi).zip(ta.data()) {
                        if *v > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), y) in da.iter_mut().zip(gi).zip(out.data()) {
                        *d += x * y;
                    }
                }
            }
            Op::Ln(a) => {
                let ta = self.value(*a);
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), v) in da.iter_mut().zip(gi).zip(ta.data()) {
                        *d += x / v;
                    }
                }
            }
            Op::Recip(a) => {
                if let Some(da) = self.buf(g, *a) {
                    for ((d, x), y) in da.iter_mut().zip(gi).zip(out.data()) {
                        *d -= x * y * y;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let n = out.cols();
                if let Some(da) = self.buf(g, *a) {
                    for ((dr, gr), yr) in
                        da.chunks_mut(n).zip(gi.chunks(n)).zip(out.data().chunks(n))
                    {
                        let s = dot(gr, yr);
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += y * (x - s);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let n = out.cols();
                if let Some(da) = self.buf(g, *a) {
                    for ((dr, gr), yr) in
                        da.chunks_mut(n).zip(gi.chunks(n)).zip(out.data().chunks(n))
                    {
                        let s: f64 = gr.iter().sum();
                        for ((d, x), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += x - y.exp() * s;
                        }
                    }
                }
            }
            Op::LogSumExpRows(a) => {
                let ta = self.value(*a);
                let n = ta.cols();
                if let Some(da) = self.buf(g, *a) {
                    for (r, (dr, xr)) in da.chunks_mut(n).zip(ta.data().chunks(n)).enumerate() {
                        let lse = out.data()[r];
                        for (d, x) in dr.iter_mut().zip(xr) {
                            *d += gi[r] * (x - lse).exp();
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(dp) = self.buf(g, p) {
                        for (r, dr) in dp.chunks_mut(w.max(1)).enumerate() {
                            axpy(1.0, &gi[r * total + offset..r * total + offset + w], dr);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(dp) = self.buf(g, p) {
                        axpy(1.0, &gi[offset..offset + len], dp);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).cols();
                let w = out.cols();
                if let Some(ds) = self.buf(g, *src) {
                    for (r, gr) in gi.chunks(w.max(1)).enumerate() {
                        axpy(1.0, gr, &mut ds[r * n + start..r * n + start + w]);
                    }
                }
            }
            Op::GatherRows { src, index } => {
                let n = out.cols();
                if let Some(ds) = self.buf(g, *src) {
                    for (r, &i) in index.iter().enumerate() {
                        axpy(1.0, &gi[r * n..(r + 1) * n], &mut ds[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::ScatterRows { src, offset } => {
                let n = out.cols();
                if let Some(ds) = self.buf(g, *src) {
                    let len = ds.len();
                    axpy(1.0, &gi[offset * n..offset * n + len], ds);
                }
            }
            Op::SumRows(a) => {
                let n = out.cols();
                if let Some(da) = self.buf(g, *a) {
                    for dr in da.chunks_mut(n.max(1)) {
                        axpy(1.0, gi, dr);
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(da) = self.buf(g, *a) {
                    for d in da.iter_mut() {
                        *d += gi[0];
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).matrix_shape();
                if let Some(da) = self.buf(g, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] += gi[j * m + i];
                        }
                    }
                }
            }
            Op::Pick { src, index } => {
                let n = self.value(*src).cols();
                if let Some(ds) = self.buf(g, *src) {
                    for (k, &(r, c)) in index.iter().enumerate() {
                        ds[r * n + c] += gi[k];
                    }
                }
            }
            Op::CrfNll {
                emissions,
                transitions,
                d_emissions,
                d_transitions,
            } => {
                if let Some(de) = self.buf(g, *emissions) {
                    axpy(gi[0], d_emissions, de);
                }
                if let Some(dt) = self.buf(g, *transitions) {
                    axpy(gi[0], d_transitions, dt);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
        let map: BTreeMap<_, _> = entries
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        ParamStore::from_map(map, 0)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let s = g.softmax(x, Axis::Row).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_empty_axis() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::zeros(1, 0));
        assert!(matches!(g.softmax(x, Axis::Row), Err(Error::EmptyAxis)));
    }

    #[test]
    fn column_softmax_normalizes_columns() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(
            Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.0]]).unwrap(),
        );
        let s = g.softmax(x, Axis::Column).unwrap();
        let t = g.value(s);
        for c in 0..2 {
            let sum: f64 = (0..3).map(|r| t.get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn activations_at_zero() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::scalar(0.0));
        let t = g.tanh(x);
        let s = g.sigmoid(x);
        assert_eq!(g.scalar(t), 0.0);
        assert_eq!(g.scalar(s), 0.5);
    }

    #[test]
    fn log_sum_exp_rows_large_values() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![1000.0, 1000.0]));
        let l = g.log_sum_exp_rows(x).unwrap();
        assert!((g.scalar(l) - 1_000.693_147_180_56).abs() < 1e-9);
    }

    #[test]
    fn matmul_shape_mismatch_reports_both_shapes() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(4, 2));
        match g.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn linear_map_gradient_is_input() {
        // loss = sum(x W); dloss/dW[p, j] = x[p]
        let w = Tensor::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.7], vec![-0.5, 0.4]]).unwrap();
        let store = store_with(&[("w", w)]);
        let id = store.id("w").unwrap();
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![1.5, -2.0, 0.25]));
        let wv = g.param(id);
        let y = g.matmul(x, wv).unwrap();
        let loss = g.sum_all(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[1.5, 1.5, -2.0, -2.0, 0.25, 0.25]);
    }

    #[test]
    fn constant_loss_gives_no_gradients() {
        let store = store_with(&[("w", Tensor::scalar(2.0))]);
        let id = store.id("w").unwrap();
        let mut g = Graph::new(&store);
        let _w = g.param(id);
        let c = g.constant(Tensor::scalar(3.0));
        let loss = g.scale(c, 2.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(id).is_none());
    }

    #[test]
    fn shared_parameter_accumulates() {
        // loss = w*w + 3w  => 2w + 3
        let store = store_with(&[("w", Tensor::scalar(2.0))]);
        let id = store.id("w").unwrap();
        let mut g = Graph::new(&store);
        let w = g.param(id);
        let sq = g.mul(w, w).unwrap();
        let lin = g.scale(w, 3.0);
        let loss = g.add(sq, lin).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = store_with(&[]);
        let mut g = Graph::new(&store);
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }
}
