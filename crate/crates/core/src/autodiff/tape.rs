use std::sync::Arc;

use super::kernels::{self, log_sigmoid, sigmoid};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::sparse::{CsrMatrix, SparseOperator};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Var {
        Var(i)
    }
}

/// Pointwise non-linearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    /// Natural log; requires strictly positive input.
    Ln,
}

/// Smallest input the `ln` backward divides by.
pub const LN_GRAD_FLOOR: f64 = 1e-12;

struct GatSaved<T> {
    pattern: Arc<CsrMatrix>,
    z: Var,
    s_dst: Var,
    s_src: Var,
    slope: f64,
    raw: Vec<T>,
    alpha: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, T),
    Activation(Var, Activation),
    LogSigmoid(Var),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Spmm(Arc<SparseOperator>, Var),
    Gat(Box<GatSaved<T>>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape is meant to live for one training step.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    mode: ExecMode,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_mode(ExecMode::Auto)
    }

    pub fn with_mode(mode: ExecMode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// A trainable leaf; receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).matrix_dims(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dims(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dims(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let data = kernels::matmul(
            self.value(a).data(),
            m,
            k,
            self.value(b).data(),
            n,
            self.mode,
        );
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `x[m×n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "add_row_bias")?;
        if self.value(b).numel() != n {
            return Err(Error::dims(
                "add_row_bias",
                self.value(x).shape(),
                self.value(b).shape(),
            ));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let rg = self.needs(&[x, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddRowBias(x, b), rg))
    }

    /// Multiplies row `i` of `x[m×n]` by `s[i]`, where `s` is `m×1`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "scale_rows")?;
        if self.value(s).numel() != m {
            return Err(Error::dims(
                "scale_rows",
                self.value(x).shape(),
                self.value(s).shape(),
            ));
        }
        let sv = self.value(s).data();
        let mut data = self.value(x).data().to_vec();
        if n > 0 {
            for (row, &f) in data.chunks_mut(n).zip(sv) {
                row.iter_mut().for_each(|v| *v *= f);
            }
        }
        let rg = self.needs(&[x, s]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ScaleRows(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let input = self.value(x);
        let value = match kind {
            Activation::Relu => input.map(|v| v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let s = T::of(slope);
                input.map(|v| if v > T::zero() { v } else { v * s })
            }
            Activation::Sigmoid => input.map(sigmoid),
            Activation::Ln => {
                if let Some(bad) = input.data().iter().find(|v| !(**v > T::zero())) {
                    return Err(Error::Domain {
                        op: "ln",
                        detail: format!("non-positive entry {bad}"),
                    });
                }
                input.map(|v| v.ln())
            }
        };
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Activation(x, kind), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu).expect("relu is total")
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(log_sigmoid);
        let rg = self.needs(&[x]);
        self.push(value, Op::LogSigmoid(x), rg)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "softmax_rows")?;
        let mut data = self.value(x).data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::SoftmaxRows(x), rg))
    }

    /// Stacks the listed rows of `table`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index {
                context: "gather_rows",
                index: bad,
                len: v,
            });
        }
        let src = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src.data()[i * d..(i + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], data)?,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    /// Column-wise concatenation of equal-height matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != m {
                return Err(Error::dims(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![m, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x, "slice_cols")?;
        if start > end || end > n {
            return Err(Error::Index {
                context: "slice_cols",
                index: end,
                len: n,
            });
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![m, w], data)?,
            Op::SliceCols(x, start, end),
            rg,
        ))
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(x, "slice_rows")?;
        if start > end || end > m {
            return Err(Error::Index {
                context: "slice_rows",
                index: end,
                len: m,
            });
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![end - start, n], data)?,
            Op::SliceRows(x, start, end),
            rg,
        ))
    }

    /// Row sums as an `m×1` column.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "sum_rows")?;
        let src = self.value(x).data();
        let data = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![m, 1], data)?, Op::SumRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s / T::of(n as f64)), Op::Mean(x), rg))
    }

    /// Sparse-dense product `a · x`; the backward pass is `aᵀ · grad`.
    pub fn spmm(&mut self, a: &Arc<SparseOperator>, x: Var) -> Result<Var> {
        let (rows, width) = self.dims(x, "spmm")?;
        let mat = a.matrix();
        if rows != mat.n_cols() {
            return Err(Error::dims(
                "spmm",
                &[mat.n_rows(), mat.n_cols()],
                self.value(x).shape(),
            ));
        }
        let data = mat.spmm_raw(self.value(x).data(), width, self.mode);
        let rg = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![mat.n_rows(), width], data)?,
            Op::Spmm(Arc::clone(a), x),
            rg,
        ))
    }

    /// Single-head attention aggregation over the stored entries of `pattern`
    /// (rows are targets, columns sources):
    /// `out[t] = Σ_s softmax_s(LeakyReLU(s_dst[t] + s_src[s])) · z[s]`.
    /// Rows without entries produce zeros.
    pub fn gat_aggregate(
        &mut self,
        pattern: &Arc<CsrMatrix>,
        z: Var,
        s_dst: Var,
        s_src: Var,
        slope: f64,
    ) -> Result<Var> {
        let (n, d) = self.dims(z, "gat_aggregate")?;
        if pattern.n_rows() != n || pattern.n_cols() != n {
            return Err(Error::dims(
                "gat_aggregate",
                &[pattern.n_rows(), pattern.n_cols()],
                self.value(z).shape(),
            ));
        }
        for s in [s_dst, s_src] {
            if self.value(s).numel() != n {
                return Err(Error::dims(
                    "gat_aggregate",
                    self.value(z).shape(),
                    self.value(s).shape(),
                ));
            }
        }
        let (zv, dv, sv) = (
            self.value(z).data(),
            self.value(s_dst).data(),
            self.value(s_src).data(),
        );
        let slope_t = T::of(slope);
        let per_row = par::map_indices(n, self.mode, |t| {
            let (cols, _) = pattern.row(t);
            let raw: Vec<T> = cols.iter().map(|&s| dv[t] + sv[s]).collect();
            let mut alpha: Vec<T> = raw
                .iter()
                .map(|&r| if r > T::zero() { r } else { r * slope_t })
                .collect();
            softmax_in_place(&mut alpha);
            let mut out = vec![T::zero(); d];
            for (&s, &a) in cols.iter().zip(&alpha) {
                for (o, &zs) in out.iter_mut().zip(&zv[s * d..(s + 1) * d]) {
                    *o += a * zs;
                }
            }
            (raw, alpha, out)
        });
        let mut raw = Vec::with_capacity(pattern.nnz());
        let mut alpha = Vec::with_capacity(pattern.nnz());
        let mut data = Vec::with_capacity(n * d);
        for (r, a, o) in per_row {
            raw.extend(r);
            alpha.extend(a);
            data.extend(o);
        }
        let rg = self.needs(&[z, s_dst, s_src]);
        let saved = GatSaved {
            pattern: Arc::clone(pattern),
            z,
            s_dst,
            s_src,
            slope,
            raw,
            alpha,
        };
        Ok(self.push(Tensor::new(vec![n, d], data)?, Op::Gat(Box::new(saved)), rg))
    }

    /// Attention coefficients saved by a [`Tape::gat_aggregate`] node, laid
    /// out like the pattern's stored entries.
    pub fn gat_attention(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Gat(saved) => Some(&saved.alpha),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a, "matmul")?;
                let (_, n) = self.dims(*b, "matmul")?;
                if self.wants(*a) {
                    let da = kernels::matmul_a_bt(g, m, n, self.value(*b).data(), k, self.mode);
                    self.accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = kernels::matmul_at_b(self.value(*a).data(), m, k, g, n, self.mode);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, g.to_vec());
                if self.wants(*b) {
                    let n = self.value(*b).numel();
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n.max(1)) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::ScaleRows(x, s) => {
                let (_, n) = self.dims(*x, "scale_rows")?;
                let sv = self.value(*s).data();
                if self.wants(*x) {
                    let mut dx = g.to_vec();
                    for (row, &f) in dx.chunks_mut(n.max(1)).zip(sv) {
                        row.iter_mut().for_each(|v| *v *= f);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.wants(*s) {
                    let xv = self.value(*x).data();
                    let ds = g
                        .chunks(n.max(1))
                        .zip(xv.chunks(n.max(1)))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::Scale(x, c) => {
                self.accumulate(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::Activation(x, kind) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let dx: Vec<T> = match *kind {
                    Activation::Relu => g
                        .iter()
                        .zip(xv)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect(),
                    Activation::LeakyRelu(slope) => {
                        let s = T::of(slope);
                        g.iter()
                            .zip(xv)
                            .map(|(&gv, &v)| if v > T::zero() { gv } else { gv * s })
                            .collect()
                    }
                    Activation::Sigmoid => g
                        .iter()
                        .zip(yv)
                        .map(|(&gv, &y)| gv * y * (T::one() - y))
                        .collect(),
                    Activation::Ln => {
                        let floor = T::of(LN_GRAD_FLOOR);
                        g.iter()
                            .zip(xv)
                            .map(|(&gv, &v)| gv / v.max(floor))
                            .collect()
                    }
                };
                self.accumulate(grads, *x, dx);
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x).data();
                let dx = g.iter().zip(xv).map(|(&gv, &v)| gv * sigmoid(-v)).collect();
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxRows(x) => {
                let (_, n) = self.dims(*x, "softmax_rows")?;
                let y = node.value.data();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n.max(1)).zip(g.chunks(n.max(1))) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherRows(table, ids) => {
                if self.wants(*table) {
                    let (v, d) = self.dims(*table, "gather_rows")?;
                    let mut dt = vec![T::zero(); v * d];
                    for (k, &i) in ids.iter().enumerate() {
                        for (t, &gv) in dt[i * d..(i + 1) * d]
                            .iter_mut()
                            .zip(&g[k * d..(k + 1) * d])
                        {
                            *t += gv;
                        }
                    }
                    self.accumulate(grads, *table, dt);
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start, end) => {
                let (m, n) = self.dims(*x, "slice_cols")?;
                let w = end - start;
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SliceRows(x, start, end) => {
                let (m, n) = self.dims(*x, "slice_rows")?;
                let mut dx = vec![T::zero(); m * n];
                dx[start * n..end * n].copy_from_slice(g);
                self.accumulate(grads, *x, dx);
            }
            Op::SumRows(x) => {
                let (_, n) = self.dims(*x, "sum_rows")?;
                let dx = g
                    .iter()
                    .flat_map(|&gv| std::iter::repeat_n(gv, n))
                    .collect();
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / T::of(n as f64); n]);
            }
            Op::Spmm(a, x) => {
                let width = node.value.cols();
                let dx = a.transposed().spmm_raw(g, width, self.mode);
                self.accumulate(grads, *x, dx);
            }
            Op::Gat(saved) => self.gat_backward(saved, node.value.cols(), g, grads),
        }
        Ok(())
    }

    fn gat_backward(&self, saved: &GatSaved<T>, d: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let pattern = &saved.pattern;
        let n = pattern.n_rows();
        let zv = self.value(saved.z).data();
        let slope = T::of(saved.slope);
        let row_ptr = pattern.row_ptr();
        // d(loss)/d(raw score) per stored entry, computed row by row
        let d_raw: Vec<Vec<T>> = par::map_indices(n, self.mode, |t| {
            let (cols, _) = pattern.row(t);
            let span = row_ptr[t]..row_ptr[t + 1];
            let alpha = &saved.alpha[span.clone()];
            let raw = &saved.raw[span];
            let gt = &g[t * d..(t + 1) * d];
            let d_alpha: Vec<T> = cols
                .iter()
                .map(|&s| {
                    gt.iter()
                        .zip(&zv[s * d..(s + 1) * d])
                        .map(|(&a, &b)| a * b)
                        .sum()
                })
                .collect();
            let dot: T = alpha.iter().zip(&d_alpha).map(|(&a, &b)| a * b).sum();
            alpha
                .iter()
                .zip(&d_alpha)
                .zip(raw)
                .map(|((&a, &da), &r)| {
                    let de = a * (da - dot);
                    if r > T::zero() {
                        de
                    } else {
                        de * slope
                    }
                })
                .collect()
        });
        if self.wants(saved.s_dst) {
            let ds: Vec<T> = d_raw.iter().map(|row| row.iter().copied().sum()).collect();
            self.accumulate(grads, saved.s_dst, ds);
        }
        if self.wants(saved.s_src) {
            let mut ds = vec![T::zero(); n];
            for (t, row) in d_raw.iter().enumerate() {
                for (&s, &v) in pattern.row(t).0.iter().zip(row) {
                    ds[s] += v;
                }
            }
            self.accumulate(grads, saved.s_src, ds);
        }
        if self.wants(saved.z) {
            let mut dz = vec![T::zero(); n * d];
            for t in 0..n {
                let (cols, _) = pattern.row(t);
                let alpha = &saved.alpha[row_ptr[t]..row_ptr[t + 1]];
                let gt = &g[t * d..(t + 1) * d];
                for (&s, &a) in cols.iter().zip(alpha) {
                    for (o, &gv) in dz[s * d..(s + 1) * d].iter_mut().zip(gt) {
                        *o += a * gv;
                    }
                }
            }
            self.accumulate(grads, saved.z, dz);
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches its value's shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}
