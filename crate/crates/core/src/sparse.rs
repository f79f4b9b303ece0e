//! Compressed sparse row matrices and the sparse-dense product used for
//! metapath propagation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Row-major CSR matrix in canonical form: column indices strictly increase
/// within every row and duplicate coordinates have been summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f32>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a canonical matrix from `(row, col, value)` triples.
    /// Duplicates are summed in input order.
    pub fn from_edges<I>(n_rows: usize, n_cols: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f32)>,
    {
        let mut edges: Vec<(usize, usize, f32)> = edges.into_iter().collect();
        for &(r, c, _) in &edges {
            if r >= n_rows {
                return Err(Error::Index {
                    context: "csr row",
                    index: r,
                    len: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::Index {
                    context: "csr column",
                    index: c,
                    len: n_cols,
                });
            }
        }
        // stable: duplicate values are accumulated in the caller's order
        edges.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(edges.len());
        let mut values: Vec<f32> = Vec::with_capacity(edges.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in edges {
            if last == Some((r, c)) {
                *values.last_mut().expect("non-empty after first edge") += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Assembles a matrix from raw arrays, checking every canonical-form invariant.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let m = CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(format!("csr: {msg}")));
        if self.row_ptr.len() != self.n_rows + 1 {
            return bad(format!(
                "row_ptr has length {} for {} rows",
                self.row_ptr.len(),
                self.n_rows
            ));
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] != 0".into());
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr decreases".into());
        }
        let nnz = self.row_ptr[self.n_rows];
        if nnz != self.col_idx.len() || nnz != self.values.len() {
            return bad(format!(
                "nnz {nnz} vs {} columns / {} values",
                self.col_idx.len(),
                self.values.len()
            ));
        }
        for r in 0..self.n_rows {
            let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("row {r} columns not strictly increasing"));
            }
            if let Some(&c) = cols.last() {
                if c >= self.n_cols {
                    return bad(format!("row {r} column {c} >= {}", self.n_cols));
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f32]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates `(row, col, value)` in canonical order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0f32; self.nnz()];
        // rows visited in increasing order keep the transposed columns sorted
        for (r, c, v) in self.triples() {
            let slot = next[c];
            col_idx[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Scales every nonempty row to sum to one. Empty rows stay empty.
    pub fn row_normalize(&self) -> Result<CsrMatrix> {
        if let Some(v) = self.values.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Contract(format!(
                "row_normalize needs non-negative values, found {v}"
            )));
        }
        let mut out = self.clone();
        for r in 0..self.n_rows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let sum: f64 = out.values[span.clone()].iter().map(|&v| v as f64).sum();
            if sum > 0.0 {
                for v in &mut out.values[span] {
                    *v = (*v as f64 / sum) as f32;
                }
            }
        }
        Ok(out)
    }

    /// Same sparsity pattern with every stored value set to one.
    pub fn pattern(&self) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = 1.0);
        out
    }

    /// `A + I` for a square matrix.
    pub fn with_identity(&self) -> Result<CsrMatrix> {
        if self.n_rows != self.n_cols {
            return Err(Error::dims(
                "with_identity",
                &[self.n_rows, self.n_cols],
                &[self.n_cols, self.n_cols],
            ));
        }
        let diag = (0..self.n_rows).map(|i| (i, i, 1.0));
        CsrMatrix::from_edges(self.n_rows, self.n_cols, self.triples().chain(diag))
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut d = vec![0f32; self.n_rows * self.n_cols];
        for (r, c, v) in self.triples() {
            d[r * self.n_cols + c] += v;
        }
        d
    }

    /// Raw sparse-dense product over row-major `x` with `width` columns.
    pub fn spmm_raw<T: Scalar>(&self, x: &[T], width: usize, mode: ExecMode) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_cols * width);
        let mut out = vec![T::zero(); self.n_rows * width];
        par::for_each_row(&mut out, width, mode, |r, row| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let v = T::from_f32(v);
                let src = &x[c * width..(c + 1) * width];
                for (o, &s) in row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        });
        out
    }
}

/// Sparse-dense product `a · x` outside of any tape.
pub fn spmm<T: Scalar>(a: &CsrMatrix, x: &Tensor<T>) -> Result<Tensor<T>> {
    spmm_with(a, x, ExecMode::Auto)
}

pub fn spmm_with<T: Scalar>(a: &CsrMatrix, x: &Tensor<T>, mode: ExecMode) -> Result<Tensor<T>> {
    let (rows, width) = x.matrix_dims("spmm")?;
    if rows != a.n_cols() {
        return Err(Error::dims("spmm", &[a.n_rows(), a.n_cols()], x.shape()));
    }
    Tensor::new(vec![a.n_rows(), width], a.spmm_raw(x.data(), width, mode))
}

/// A propagation matrix bundled with its transpose, so the backward pass of
/// `spmm` is itself a row-parallel product.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperator {
    pub fn new(forward: CsrMatrix) -> Self {
        let transpose = forward.transpose();
        SparseOperator { forward, transpose }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }

    pub fn transposed(&self) -> &CsrMatrix {
        &self.transpose
    }
}
