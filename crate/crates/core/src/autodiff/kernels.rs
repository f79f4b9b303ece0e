//! Dense matrix kernels shared by the forward and backward passes.

use super::Scalar;
use crate::par::{self, ExecMode};

/// `a[m×k] · b[k×n]`.
pub fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize, mode: ExecMode) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    par::for_each_row(&mut out, n, mode, |i, row| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

/// `g[m×n] · b[k×n]ᵀ`, giving `m×k`.
pub fn matmul_a_bt<T: Scalar>(
    g: &[T],
    m: usize,
    n: usize,
    b: &[T],
    k: usize,
    mode: ExecMode,
) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    par::for_each_row(&mut out, k, mode, |i, row| {
        let grow = &g[i * n..(i + 1) * n];
        for (p, o) in row.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    });
    out
}

/// `a[m×k]ᵀ · g[m×n]`, giving `k×n`.
pub fn matmul_at_b<T: Scalar>(
    a: &[T],
    m: usize,
    k: usize,
    g: &[T],
    n: usize,
    mode: ExecMode,
) -> Vec<T> {
    let at = transpose(a, m, k);
    matmul(&at, k, m, g, n, mode)
}

pub fn transpose<T: Scalar>(a: &[T], m: usize, k: usize) -> Vec<T> {
    let mut at = vec![T::zero(); m * k];
    for i in 0..m {
        for p in 0..k {
            at[p * m + i] = a[i * k + p];
        }
    }
    at
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
#[inline]
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    x.min(T::zero()) - (-x.abs()).exp().ln_1p()
}
