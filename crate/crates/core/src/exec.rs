//! Chunked data-parallel helpers.
//!
//! Work is always split into chunks whose boundaries depend only on the
//! input length, and partial results are combined in chunk order. The
//! parallel and sequential paths therefore produce bitwise-identical
//! output; the thread count only affects wall time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How data-parallel loops are executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn from_threads(threads: usize) -> Self {
        if threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Sizes the global worker pool. Zero keeps the default of one worker per
/// core. Has no effect when built without the `parallel` feature or after
/// the pool has started.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        return rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok();
    }
    let _ = threads;
    false
}

/// Chunk length used for a loop over `len` items.
pub fn chunk_len(len: usize, min_chunk: usize) -> usize {
    min_chunk.max(len.div_ceil(64)).max(1)
}

/// Maps `f` over consecutive chunks of `items`, returning results in chunk order.
/// `f` receives the offset of the chunk's first element.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items
            .par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect();
    }
    let _ = exec;
    items
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i * chunk, c))
        .collect()
}

/// Maps `f` over index ranges `[start, end)` covering `0..len`.
pub fn map_ranges<R, F>(len: usize, chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize, usize) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = len.div_ceil(chunk);
    let run = |i: usize| f(i * chunk, ((i + 1) * chunk).min(len));
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n_chunks).into_par_iter().map(run).collect();
    }
    let _ = exec;
    (0..n_chunks).map(run).collect()
}

/// Applies `f` to each mutable chunk of `items` in place.
pub fn for_each_chunk_mut<T, F>(items: &mut [T], chunk: usize, exec: Execution, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items
            .par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
        return;
    }
    let _ = exec;
    items
        .chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i * chunk, c));
}

/// Deterministic sum: per-chunk partial sums added in chunk order.
pub fn sum_chunks<T, F>(items: &[T], exec: Execution, f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map_chunks(items, chunk_len(items.len(), 4096), exec, |_, c| {
        c.iter().map(&f).sum::<f64>()
    })
    .into_iter()
    .sum()
}
