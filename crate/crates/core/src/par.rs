//! Row-parallel execution helpers.
//!
//! Every kernel in the crate parallelizes only across independent output rows
//! (or independent users during evaluation), and each row is reduced in a
//! fixed sequential order. Parallel and sequential runs are therefore
//! bitwise identical; the `parallel` feature only changes wall-clock time.

/// How a kernel distributes its output rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    /// Parallel when the `parallel` feature is on, the pool has more than one
    /// thread, and the workload is large enough to amortize the split.
    #[default]
    Auto,
    Sequential,
    /// Always split across the rayon pool (sequential without the feature).
    Parallel,
}

const MIN_PARALLEL_ROWS: usize = 128;

impl ExecMode {
    pub fn use_parallel(self, rows: usize) -> bool {
        match self {
            ExecMode::Sequential => false,
            ExecMode::Parallel => cfg!(feature = "parallel"),
            ExecMode::Auto => {
                cfg!(feature = "parallel") && rows >= MIN_PARALLEL_ROWS && current_threads() > 1
            }
        }
    }
}

/// Number of worker threads kernels can use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Configures the global worker pool. Returns false if it was already built
/// (the existing pool is kept) or the crate was built without `parallel`.
pub fn init_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Calls `f(row_index, row)` on every `width`-sized chunk of `out`.
pub fn for_each_row<T, F>(out: &mut [T], width: usize, mode: ExecMode, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if mode.use_parallel(out.len() / width) {
        use rayon::prelude::*;
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = mode;
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

/// Order-preserving map over `0..n`.
pub fn map_indices<R, F>(n: usize, mode: ExecMode, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode.use_parallel(n) {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}
