//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) these run on the rayon global
//! pool; without it they are plain iterator loops. Output order always
//! matches input order, so results are identical in both builds as long as
//! the per-item closure is deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build evaluates the helpers in parallel.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// `f(0), f(1), ..., f(n - 1)` in order.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    F: Fn(&S) -> T,
{
    items.iter().map(f).collect()
}

/// Like [`map_range`] but short-circuits on the first error (by index order).
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}
