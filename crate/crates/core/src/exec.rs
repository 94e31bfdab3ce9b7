//! Data-parallel execution helper.
//!
//! Per-user simulation work is embarrassingly parallel: every closure owns
//! its user state and RNG stream, and results are collected back in input
//! order so reports are identical whichever path runs. The `parallel`
//! feature (on by default) backs [`map_indexed`] with rayon; without it the
//! same call degrades to a plain sequential loop. [`map_indexed_seq`] is
//! always available as the baseline the bench suite compares against.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_indexed_seq(n, f)
}

/// Sequential reference path, kept unconditionally for benchmarking.
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Explicit execution choice, used by the benchmark suite to compare the
/// data-parallel path against the sequential reference in one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Parallel,
    Sequential,
}

pub fn map_mode<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Parallel => map_indexed(n, f),
        ExecMode::Sequential => map_indexed_seq(n, f),
    }
}
