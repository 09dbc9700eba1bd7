//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records a forward computation as an arena of nodes. Leaves are
//! constants or parameter injections; every other node stores which op
//! produced it. [`Graph::backward`] walks the arena in reverse creation order
//! (which is a topological order, since parents always exist before children)
//! and accumulates gradients.
//!
//! Parameters live outside the graph in a [`ParamSet`]; injecting one records
//! a binding so [`Graph::accumulate_param_grads`] can add the computed
//! gradients back onto the parameters after a backward pass.

use rand::Rng;

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use super::NnError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    /// `a[n x k] + row[1 x k]`, broadcast over rows.
    AddRow(VarId, VarId),
    /// `a[n x k] + col[n x 1]`, broadcast over columns.
    AddCol(VarId, VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Relu(VarId),
    Transpose(VarId),
    ConcatCols(Vec<VarId>),
    ConcatRows(Vec<VarId>),
    SliceCols(VarId, usize),
    RowSelect(VarId, usize),
    Get(VarId, usize, usize),
    SumAll(VarId),
    /// Log-sum-exp across each row: `n x k -> n x 1`.
    LogSumExpRows(VarId),
    /// Log-sum-exp down each column: `n x k -> 1 x k`.
    LogSumExpCols(VarId),
    SoftmaxRows(VarId),
    /// Elementwise product with the constant mask stored in `aux`.
    MulMask(VarId),
    LayerNormRows {
        x: VarId,
        gain: VarId,
        bias: VarId,
    },
}

#[derive(Debug)]
enum Binding {
    Whole(ParamId),
    Row(ParamId, usize),
}

struct Node {
    value: Matrix,
    op: Op,
    aux: Option<Matrix>,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(VarId, Binding)>,
    grads: Vec<Matrix>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> VarId {
        self.push_aux(value, op, None)
    }

    fn push_aux(&mut self, value: Matrix, op: Op, aux: Option<Matrix>) -> VarId {
        self.nodes.push(Node { value, op, aux });
        VarId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: VarId) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`.
    /// Only valid after [`Graph::backward`].
    pub fn grad(&self, v: VarId) -> &Matrix {
        assert!(
            !self.grads.is_empty(),
            "grad() called before backward()"
        );
        &self.grads[v.0]
    }

    /// A constant leaf (no gradient binding).
    pub fn constant(&mut self, m: Matrix) -> VarId {
        self.push(m, Op::Leaf)
    }

    /// Injects a parameter's current value as a leaf and binds it so
    /// [`Graph::accumulate_param_grads`] adds the gradient back.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> VarId {
        let v = self.push(params.value(id).clone(), Op::Leaf);
        self.bindings.push((v, Binding::Whole(id)));
        v
    }

    /// Injects a single row of a parameter (as a `1 x cols` leaf); only that
    /// row receives gradient.
    pub fn param_row(&mut self, params: &ParamSet, id: ParamId, row: usize) -> VarId {
        let value = Matrix::row_vector(params.value(id).row(row));
        let v = self.push(value, Op::Leaf);
        self.bindings.push((v, Binding::Row(id, row)));
        v
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(NnError::ShapeMismatch {
                context: "matmul".to_string(),
                left: (ar, ac),
                right: (br, bc),
            });
        }
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn binary_same_shape(
        &mut self,
        a: VarId,
        b: VarId,
        context: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::ShapeMismatch {
                context: context.to_string(),
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let (rows, cols) = self.shape(a);
        let value = Matrix::from_vec(
            rows,
            cols,
            self.nodes[a.0]
                .value
                .data()
                .iter()
                .zip(self.nodes[b.0].value.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        );
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let value = self.nodes[a.0].value.map(|x| c * x);
        self.push(value, Op::Scale(a, c))
    }

    /// `a[n x k] + row[1 x k]`, broadcast over rows of `a`.
    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId, NnError> {
        let (n, k) = self.shape(a);
        if self.shape(row) != (1, k) {
            return Err(NnError::ShapeMismatch {
                context: "add_row".to_string(),
                left: (n, k),
                right: self.shape(row),
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for i in 0..n {
            for j in 0..k {
                let r = self.nodes[row.0].value.get(0, j);
                value.add_at(i, j, r);
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// `a[n x k] + col[n x 1]`, broadcast over columns of `a`.
    pub fn add_col(&mut self, a: VarId, col: VarId) -> Result<VarId, NnError> {
        let (n, k) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(NnError::ShapeMismatch {
                context: "add_col".to_string(),
                left: (n, k),
                right: self.shape(col),
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        for i in 0..n {
            let c = self.nodes[col.0].value.get(i, 0);
            for j in 0..k {
                value.add_at(i, j, c);
            }
        }
        Ok(self.push(value, Op::AddCol(a, col)))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let value = self.nodes[a.0].value.transposed();
        self.push(value, Op::Transpose(a))
    }

    /// Horizontal concatenation: all parts must have the same row count.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> Result<VarId, NnError> {
        if parts.is_empty() {
            return Err(NnError::InvalidArgument("concat_cols of nothing".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(NnError::ShapeMismatch {
                    context: "concat_cols".to_string(),
                    left: (rows, cols),
                    right: (r, c),
                });
            }
            cols += c;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            for i in 0..rows {
                for j in 0..m.cols() {
                    value.set(i, offset + j, m.get(i, j));
                }
            }
            offset += m.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation: all parts must have the same column count.
    pub fn concat_rows(&mut self, parts: &[VarId]) -> Result<VarId, NnError> {
        if parts.is_empty() {
            return Err(NnError::InvalidArgument("concat_rows of nothing".into()));
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(NnError::ShapeMismatch {
                    context: "concat_rows".to_string(),
                    left: (rows, cols),
                    right: (r, c),
                });
            }
            rows += r;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = &self.nodes[p.0].value;
            for i in 0..m.rows() {
                for j in 0..cols {
                    value.set(offset + i, j, m.get(i, j));
                }
            }
            offset += m.rows();
        }
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> Result<VarId, NnError> {
        let (rows, cols) = self.shape(a);
        if start + len > cols {
            return Err(NnError::InvalidArgument(format!(
                "slice_cols {start}..{} out of 0..{cols}",
                start + len
            )));
        }
        let src = &self.nodes[a.0].value;
        let value = Matrix::from_fn(rows, len, |i, j| src.get(i, start + j));
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    /// Selects one row as a `1 x cols` matrix.
    pub fn row(&mut self, a: VarId, i: usize) -> Result<VarId, NnError> {
        let (rows, _) = self.shape(a);
        if i >= rows {
            return Err(NnError::InvalidArgument(format!(
                "row {i} out of 0..{rows}"
            )));
        }
        let value = Matrix::row_vector(self.nodes[a.0].value.row(i));
        Ok(self.push(value, Op::RowSelect(a, i)))
    }

    /// Selects one element as a `1 x 1` matrix.
    pub fn get(&mut self, a: VarId, i: usize, j: usize) -> Result<VarId, NnError> {
        let (rows, cols) = self.shape(a);
        if i >= rows || j >= cols {
            return Err(NnError::InvalidArgument(format!(
                "element ({i},{j}) out of {rows}x{cols}"
            )));
        }
        let value = Matrix::from_vec(1, 1, vec![self.nodes[a.0].value.get(i, j)]);
        Ok(self.push(value, Op::Get(a, i, j)))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let total: f64 = self.nodes[a.0].value.data().iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![total]), Op::SumAll(a))
    }

    /// Log-sum-exp across each row: `n x k -> n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: VarId) -> VarId {
        let m = &self.nodes[a.0].value;
        let value = Matrix::from_fn(m.rows(), 1, |i, _| super::log_sum_exp_slice(m.row(i)));
        self.push(value, Op::LogSumExpRows(a))
    }

    /// Log-sum-exp down each column: `n x k -> 1 x k`.
    pub fn log_sum_exp_cols(&mut self, a: VarId) -> VarId {
        let m = &self.nodes[a.0].value;
        let (rows, cols) = m.shape();
        let value = Matrix::from_fn(1, cols, |_, j| {
            let col: Vec<f64> = (0..rows).map(|i| m.get(i, j)).collect();
            super::log_sum_exp_slice(&col)
        });
        self.push(value, Op::LogSumExpCols(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let m = &self.nodes[a.0].value;
        let mut value = Matrix::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            let s = super::softmax_slice(m.row(i));
            value.row_mut(i).copy_from_slice(&s);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Elementwise multiplication by a constant mask (used by dropout).
    pub fn mul_mask(&mut self, a: VarId, mask: Matrix) -> Result<VarId, NnError> {
        if self.shape(a) != mask.shape() {
            return Err(NnError::ShapeMismatch {
                context: "mul_mask".to_string(),
                left: self.shape(a),
                right: mask.shape(),
            });
        }
        let m = &self.nodes[a.0].value;
        let value = Matrix::from_vec(
            m.rows(),
            m.cols(),
            m.data()
                .iter()
                .zip(mask.data())
                .map(|(&x, &w)| x * w)
                .collect(),
        );
        Ok(self.push_aux(value, Op::MulMask(a), Some(mask)))
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; in
    /// inference mode (or at rate 0) this is the identity and adds no node.
    pub fn dropout(
        &mut self,
        a: VarId,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<VarId, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.shape(a);
        let keep = 1.0 - rate;
        let mask = Matrix::from_fn(rows, cols, |_, _| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                1.0 / keep
            }
        });
        self.mul_mask(a, mask)
    }

    /// Affine map `x W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Row-wise layer normalization with learned gain and bias (`1 x k`).
    pub fn layer_norm_rows(
        &mut self,
        x: VarId,
        gain: VarId,
        bias: VarId,
    ) -> Result<VarId, NnError> {
        let (n, k) = self.shape(x);
        if self.shape(gain) != (1, k) || self.shape(bias) != (1, k) {
            return Err(NnError::ShapeMismatch {
                context: "layer_norm_rows".to_string(),
                left: (n, k),
                right: self.shape(gain),
            });
        }
        let xm = &self.nodes[x.0].value;
        let gm = &self.nodes[gain.0].value;
        let bm = &self.nodes[bias.0].value;
        let mut value = Matrix::zeros(n, k);
        for i in 0..n {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / k as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64;
            let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &xj) in row.iter().enumerate() {
                let xhat = (xj - mean) * istd;
                value.set(i, j, gm.get(0, j) * xhat + bm.get(0, j));
            }
        }
        Ok(self.push(value, Op::LayerNormRows { x, gain, bias }))
    }

    /// Backpropagates from `root` (which must be `1 x 1`) with seed 1.
    pub fn backward(&mut self, root: VarId) -> Result<(), NnError> {
        self.backward_scaled(root, 1.0)
    }

    /// Backpropagates with an arbitrary seed gradient at the scalar root.
    pub fn backward_scaled(&mut self, root: VarId, seed: f64) -> Result<(), NnError> {
        if self.shape(root) != (1, 1) {
            return Err(NnError::InvalidArgument(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(root)
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        self.grads[root.0].set(0, 0, seed);

        for idx in (0..self.nodes.len()).rev() {
            let g = self.grads[idx].clone();
            if g.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = g.matmul(&self.nodes[b.0].value.transposed());
                    let gb = self.nodes[a.0].value.transposed().matmul(&g);
                    self.grads[a.0].add_scaled(&ga, 1.0);
                    self.grads[b.0].add_scaled(&gb, 1.0);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.grads[a.0].add_scaled(&g, 1.0);
                    self.grads[b.0].add_scaled(&g, 1.0);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.grads[a.0].add_scaled(&g, 1.0);
                    self.grads[b.0].add_scaled(&g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            let gij = g.get(i, j);
                            let av = self.nodes[a.0].value.get(i, j);
                            let bv = self.nodes[b.0].value.get(i, j);
                            self.grads[a.0].add_at(i, j, gij * bv);
                            self.grads[b.0].add_at(i, j, gij * av);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    self.grads[a.0].add_scaled(&g, c);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    self.grads[a.0].add_scaled(&g, 1.0);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            self.grads[row.0].add_at(0, j, g.get(i, j));
                        }
                    }
                }
                Op::AddCol(a, col) => {
                    let (a, col) = (*a, *col);
                    self.grads[a.0].add_scaled(&g, 1.0);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            self.grads[col.0].add_at(i, 0, g.get(i, j));
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let out = &self.nodes[idx].value;
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            let s = out.get(i, j);
                            self.grads[a.0].add_at(i, j, g.get(i, j) * s * (1.0 - s));
                        }
                    }
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let out = &self.nodes[idx].value;
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            let t = out.get(i, j);
                            self.grads[a.0].add_at(i, j, g.get(i, j) * (1.0 - t * t));
                        }
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let inp = &self.nodes[a.0].value;
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            if inp.get(i, j) > 0.0 {
                                self.grads[a.0].add_at(i, j, g.get(i, j));
                            }
                        }
                    }
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let gt = g.transposed();
                    self.grads[a.0].add_scaled(&gt, 1.0);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        for i in 0..rows {
                            for j in 0..cols {
                                self.grads[p.0].add_at(i, j, g.get(i, offset + j));
                            }
                        }
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[p.0].value.shape();
                        for i in 0..rows {
                            for j in 0..cols {
                                self.grads[p.0].add_at(i, j, g.get(offset + i, j));
                            }
                        }
                        offset += rows;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (a, start) = (*a, *start);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            self.grads[a.0].add_at(i, start + j, g.get(i, j));
                        }
                    }
                }
                Op::RowSelect(a, i) => {
                    let (a, i) = (*a, *i);
                    for j in 0..g.cols() {
                        self.grads[a.0].add_at(i, j, g.get(0, j));
                    }
                }
                Op::Get(a, i, j) => {
                    let (a, i, j) = (*a, *i, *j);
                    self.grads[a.0].add_at(i, j, g.get(0, 0));
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let s = g.get(0, 0);
                    let (rows, cols) = self.nodes[a.0].value.shape();
                    for i in 0..rows {
                        for j in 0..cols {
                            self.grads[a.0].add_at(i, j, s);
                        }
                    }
                }
                Op::LogSumExpRows(a) => {
                    let a = *a;
                    let inp = &self.nodes[a.0].value;
                    let out = &self.nodes[idx].value;
                    for i in 0..inp.rows() {
                        let gi = g.get(i, 0);
                        if gi == 0.0 {
                            continue;
                        }
                        let lse = out.get(i, 0);
                        for j in 0..inp.cols() {
                            let w = (inp.get(i, j) - lse).exp();
                            self.grads[a.0].add_at(i, j, gi * w);
                        }
                    }
                }
                Op::LogSumExpCols(a) => {
                    let a = *a;
                    let inp = &self.nodes[a.0].value;
                    let out = &self.nodes[idx].value;
                    for j in 0..inp.cols() {
                        let gj = g.get(0, j);
                        if gj == 0.0 {
                            continue;
                        }
                        let lse = out.get(0, j);
                        for i in 0..inp.rows() {
                            let w = (inp.get(i, j) - lse).exp();
                            self.grads[a.0].add_at(i, j, gj * w);
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let out = &self.nodes[idx].value;
                    for i in 0..out.rows() {
                        let dot: f64 = (0..out.cols())
                            .map(|j| g.get(i, j) * out.get(i, j))
                            .sum();
                        for j in 0..out.cols() {
                            let s = out.get(i, j);
                            self.grads[a.0].add_at(i, j, s * (g.get(i, j) - dot));
                        }
                    }
                }
                Op::MulMask(a) => {
                    let a = *a;
                    let mask = self.nodes[idx].aux.as_ref().expect("mask present");
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            self.grads[a.0].add_at(i, j, g.get(i, j) * mask.get(i, j));
                        }
                    }
                }
                Op::LayerNormRows { x, gain, bias } => {
                    let (x, gain, bias) = (*x, *gain, *bias);
                    let xm = &self.nodes[x.0].value;
                    let gm = &self.nodes[gain.0].value;
                    let (n, k) = xm.shape();
                    let kf = k as f64;
                    for i in 0..n {
                        let row = xm.row(i);
                        let mean = row.iter().sum::<f64>() / kf;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / kf;
                        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();

                        let mut dxhat = vec![0.0; k];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..k {
                            let gij = g.get(i, j);
                            let xhat = (row[j] - mean) * istd;
                            dxhat[j] = gij * gm.get(0, j);
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat;
                            self.grads[gain.0].add_at(0, j, gij * xhat);
                            self.grads[bias.0].add_at(0, j, gij);
                        }
                        for j in 0..k {
                            let xhat = (row[j] - mean) * istd;
                            let dx = istd
                                * (dxhat[j] - sum_dxhat / kf - xhat * sum_dxhat_xhat / kf);
                            self.grads[x.0].add_at(i, j, dx);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the gradients of all bound parameter leaves back onto the
    /// parameter set. Call after [`Graph::backward`].
    pub fn accumulate_param_grads(&self, params: &mut ParamSet) {
        assert!(
            !self.grads.is_empty(),
            "accumulate_param_grads called before backward()"
        );
        for (var, binding) in &self.bindings {
            let g = &self.grads[var.0];
            match binding {
                Binding::Whole(id) => params.get_mut(*id).grad.add_scaled(g, 1.0),
                Binding::Row(id, row) => {
                    let grad_row = params.get_mut(*id).grad.row_mut(*row);
                    for (dst, src) in grad_row.iter_mut().zip(g.row(0)) {
                        *dst += src;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_with_identity_weight_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Matrix::zeros(1, 2));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn linear_with_zero_weight_yields_bias_rows() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = g.constant(Matrix::zeros(2, 2));
        let b = g.constant(Matrix::from_vec(1, 2, vec![7.0, -1.0]));
        let y = g.linear(x, w, b).unwrap();
        for i in 0..3 {
            assert_eq!(g.value(y).row(i), &[7.0, -1.0]);
        }
    }

    #[test]
    fn linear_matches_scalar_triple_loop() {
        let mut r = rng(5);
        let x = Matrix::from_fn(3, 2, |_, _| r.gen_range(-1.0..1.0));
        let w = Matrix::from_fn(2, 2, |_, _| r.gen_range(-1.0..1.0));
        let b = Matrix::from_fn(1, 2, |_, _| r.gen_range(-1.0..1.0));
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let bv = g.constant(b.clone());
        let y = g.linear(xv, wv, bv).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut expect = b.get(0, j);
                for k in 0..2 {
                    expect += x.get(i, k) * w.get(k, j);
                }
                assert!((g.value(y).get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(2, 3));
        let w = g.constant(Matrix::zeros(2, 2));
        let err = g.matmul(x, w).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(2, 2)"), "{msg}");
    }

    /// Finite-difference check for an arbitrary graph expression of one
    /// parameter matrix.
    fn check_unary_op(
        rows: usize,
        cols: usize,
        seed: u64,
        build: impl Fn(&mut Graph, VarId) -> VarId,
    ) {
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        let x = params.add(
            "x",
            Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.5..1.5)),
        );
        let loss = |p: &ParamSet| {
            let mut g = Graph::new();
            let xv = g.param(p, x);
            let out = build(&mut g, xv);
            // reduce to scalar via a fixed weighted sum to exercise all entries
            let (orows, ocols) = g.shape(out);
            let wm = Matrix::from_fn(orows, ocols, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
            let w = g.constant(wm);
            let prod = g.mul(out, w).unwrap();
            g.sum_all(prod)
        };
        // analytic gradients
        {
            let mut g = Graph::new();
            let xv = g.param(&params, x);
            let out = build(&mut g, xv);
            let (orows, ocols) = g.shape(out);
            let wm = Matrix::from_fn(orows, ocols, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
            let w = g.constant(wm);
            let prod = g.mul(out, w).unwrap();
            let root = g.sum_all(prod);
            g.backward(root).unwrap();
            g.accumulate_param_grads(&mut params);
        }
        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let mut g = Graph::new();
                let xv = g.param(p, x);
                let out = build(&mut g, xv);
                let (orows, ocols) = g.shape(out);
                let wm =
                    Matrix::from_fn(orows, ocols, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
                let w = g.constant(wm);
                let prod = g.mul(out, w).unwrap();
                let root = g.sum_all(prod);
                g.value(root).scalar()
            },
            1e-4,
            None,
            &mut rng(seed + 1),
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "max rel error {} for op under test",
            report.max_rel_error
        );
        let _ = loss;
    }

    #[test]
    fn sigmoid_gradient_checks() {
        check_unary_op(3, 4, 11, |g, x| g.sigmoid(x));
    }

    #[test]
    fn tanh_gradient_checks() {
        check_unary_op(3, 4, 12, |g, x| g.tanh(x));
    }

    #[test]
    fn relu_gradient_checks() {
        check_unary_op(3, 4, 13, |g, x| g.relu(x));
    }

    #[test]
    fn transpose_gradient_checks() {
        check_unary_op(3, 4, 14, |g, x| g.transpose(x));
    }

    #[test]
    fn softmax_rows_gradient_checks() {
        check_unary_op(3, 4, 15, |g, x| g.softmax_rows(x));
    }

    #[test]
    fn log_sum_exp_reductions_gradient_check() {
        check_unary_op(3, 4, 16, |g, x| g.log_sum_exp_rows(x));
        check_unary_op(3, 4, 17, |g, x| g.log_sum_exp_cols(x));
    }

    #[test]
    fn slicing_and_concat_gradient_check() {
        check_unary_op(3, 4, 18, |g, x| {
            let a = g.slice_cols(x, 0, 2).unwrap();
            let b = g.slice_cols(x, 2, 2).unwrap();
            let back = g.concat_cols(&[b, a]).unwrap();
            let r0 = g.row(back, 0).unwrap();
            let r1 = g.row(back, 1).unwrap();
            let r2 = g.row(back, 2).unwrap();
            g.concat_rows(&[r2, r0, r1]).unwrap()
        });
    }

    #[test]
    fn matmul_gradient_checks_both_sides() {
        let mut r = rng(21);
        let mut params = ParamSet::new();
        let a = params.add("a", Matrix::from_fn(2, 3, |_, _| r.gen_range(-1.0..1.0)));
        let b = params.add("b", Matrix::from_fn(3, 2, |_, _| r.gen_range(-1.0..1.0)));
        let eval = |p: &ParamSet| {
            let mut g = Graph::new();
            let av = g.param(p, a);
            let bv = g.param(p, b);
            let prod = g.matmul(av, bv).unwrap();
            let sig = g.sigmoid(prod);
            let root = g.sum_all(sig);
            (g, root)
        };
        let (mut g, root) = eval(&params);
        g.backward(root).unwrap();
        g.accumulate_param_grads(&mut params);
        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let (g, root) = eval(p);
                g.value(root).scalar()
            },
            1e-4,
            None,
            &mut rng(22),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn layer_norm_gradient_checks() {
        let mut r = rng(31);
        let mut params = ParamSet::new();
        let x = params.add("x", Matrix::from_fn(3, 4, |_, _| r.gen_range(-1.0..1.0)));
        let gain = params.add("gain", Matrix::from_fn(1, 4, |_, _| r.gen_range(0.5..1.5)));
        let bias = params.add("bias", Matrix::from_fn(1, 4, |_, _| r.gen_range(-0.5..0.5)));
        let eval = |p: &ParamSet| {
            let mut g = Graph::new();
            let xv = g.param(p, x);
            let gv = g.param(p, gain);
            let bv = g.param(p, bias);
            let out = g.layer_norm_rows(xv, gv, bv).unwrap();
            let t = g.tanh(out);
            let root = g.sum_all(t);
            (g, root)
        };
        let (mut g, root) = eval(&params);
        g.backward(root).unwrap();
        g.accumulate_param_grads(&mut params);
        let report = finite_diff_gradcheck(
            &mut params,
            |p| {
                let (g, root) = eval(p);
                g.value(root).scalar()
            },
            1e-4,
            None,
            &mut rng(32),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn param_row_gradient_flows_to_exactly_that_row() {
        let mut params = ParamSet::new();
        let table = params.add("table", Matrix::from_fn(4, 3, |i, j| (i + j) as f64));
        let mut g = Graph::new();
        let row = g.param_row(&params, table, 2);
        let s = g.sum_all(row);
        g.backward(s).unwrap();
        g.accumulate_param_grads(&mut params);
        let grad = params.grad(table);
        for i in 0..4 {
            for j in 0..3 {
                let expect = if i == 2 { 1.0 } else { 0.0 };
                assert_eq!(grad.get(i, j), expect);
            }
        }
    }

    #[test]
    fn dropout_identity_in_inference_and_at_rate_zero() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64));
        let mut r = rng(40);
        let y = g.dropout(x, 0.5, false, &mut r).unwrap();
        assert_eq!(x, y);
        let z = g.dropout(x, 0.0, true, &mut r).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut g = Graph::new();
        let x = g.constant(Matrix::zeros(2, 2));
        let mut r = rng(41);
        assert!(g.dropout(x, 1.0, true, &mut r).is_err());
    }
}
