//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work by output element (row, point, seed) and runs the
//! per-element computation with the same sequential inner loop in both modes,
//! so results are bit-identical whether or not rayon is used.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output rows the sequential path is always taken.
#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 16;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Selects the execution mode for subsequent calls. Without the `parallel`
/// feature this is a no-op and everything runs sequentially.
pub fn set_mode(mode: ExecMode) {
    FORCE_SEQUENTIAL.store(mode == ExecMode::Sequential, Ordering::SeqCst);
}

pub fn mode() -> ExecMode {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst) {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

#[cfg(feature = "parallel")]
fn use_parallel(n: usize) -> bool {
    n >= PARALLEL_THRESHOLD && mode() == ExecMode::Parallel
}

/// Calls `f(row_index, row)` for every `row_len`-sized chunk of `out`.
pub fn for_each_row_mut<T, F>(out: &mut [T], row_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if row_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if use_parallel(out.len() / row_len) {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| f(i, row));
            return;
        }
    }
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Evaluates `f` over `0..n`, returning results in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if use_parallel(n) {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Runs one independent job per seed (always fanned out when parallel is on,
/// regardless of the row threshold). Output order follows `seeds`.
pub fn sweep<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode() == ExecMode::Parallel {
            return seeds.par_iter().map(|&s| f(s)).collect();
        }
    }
    seeds.iter().map(|&s| f(s)).collect()
}
