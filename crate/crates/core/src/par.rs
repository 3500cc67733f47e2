//! Index-parallel map with a sequential fallback.
//!
//! Results are always collected in index order and any reduction over them is
//! done sequentially by the caller, so outputs are bit-identical regardless of
//! the thread count or whether the `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Whether this build was compiled with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
