//! Thread-count control and the deterministic parallel-for used by the
//! heavy kernels.
//!
//! Work is only ever split into disjoint output regions, so results are
//! bit-identical at every thread count. Without the `parallel` feature the
//! helpers degrade to serial loops.

use core::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Set the worker count used by the kernels. 1 disables parallelism.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Minimum per-chunk element count before a loop is worth parallelizing.
pub const PAR_GRAIN: usize = 16 * 1024;

/// Run `f(chunk_index, chunk)` over consecutive `chunk_len`-sized pieces of
/// `out`, in parallel when the configured thread count allows. Each chunk is
/// written by exactly one worker.
pub fn par_chunks_mut<T, F>(out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        if threads() > 1 && out.len() > chunk_len {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in out.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Run `f(i)` for `i` in `0..n` in parallel. The closure must only touch
/// state disjoint per `i` (enforced by the callers, typically via raw
/// pointers into per-index regions).
pub fn par_iter<F>(n: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads() > 1 && n > 1 {
            use rayon::prelude::*;
            (0..n).into_par_iter().for_each(f);
            return;
        }
    }
    for i in 0..n {
        f(i);
    }
}
