//! Execution helpers: data-parallel loops with a sequential fallback.
//!
//! Every helper here is deterministic: parallel variants only ever hand out
//! disjoint `&mut` chunks or collect per-index results into a pre-sized
//! buffer, so no floating-point reduction order depends on scheduling.
//! With the `parallel` feature disabled the helpers run inline.
//!
//! [`sequential_scope`] forces the sequential path at runtime, which the
//! bench suite uses to compare both paths in one binary.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Runs `f` with all exec helpers forced onto their sequential paths.
pub fn sequential_scope<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.swap(true, Ordering::SeqCst);
    let out = f();
    FORCE_SEQUENTIAL.store(prev, Ordering::SeqCst);
    out
}

/// Splits `data` into chunks of `chunk_len` and applies `f(chunk_index, chunk)`
/// to each, in parallel when enabled.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Like [`for_each_chunk_mut`], but only goes parallel when each chunk
/// carries at least `work_per_chunk` units of work (an estimate supplied
/// by the caller, roughly FLOPs). Spawn overhead swamps sub-microsecond
/// tasks, and an outer layer (batch items, pyramid scales) usually
/// parallelizes those cases already.
pub fn for_each_chunk_mut_threshold<T, F>(
    data: &mut [T],
    chunk_len: usize,
    work_per_chunk: usize,
    f: F,
) where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    const MIN_PARALLEL_WORK: usize = 150_000;
    if work_per_chunk >= MIN_PARALLEL_WORK {
        for_each_chunk_mut(data, chunk_len, f);
    } else {
        for (i, c) in data.chunks_mut(chunk_len).enumerate() {
            f(i, c);
        }
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Runs two closures, in parallel when enabled, returning both results.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return rayon::join(a, b);
    }
    (a(), b())
}

/// Three-way [`join`].
pub fn join3<A, B, C, RA, RB, RC>(a: A, b: B, c: C) -> (RA, RB, RC)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    C: FnOnce() -> RC + Send,
    RA: Send,
    RB: Send,
    RC: Send,
{
    let (ra, (rb, rc)) = join(a, || join(b, c));
    (ra, rb, rc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_map_matches_sequential() {
        let mut par = vec![0usize; 64];
        for_each_chunk_mut(&mut par, 8, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = i * 100 + j;
            }
        });
        let mut seq = vec![0usize; 64];
        sequential_scope(|| {
            for_each_chunk_mut(&mut seq, 8, |i, c| {
                for (j, v) in c.iter_mut().enumerate() {
                    *v = i * 100 + j;
                }
            });
        });
        assert_eq!(par, seq);
    }

    #[test]
    fn map_indexed_preserves_order() {
        let out = map_indexed(16, |i| i * i);
        assert_eq!(out, (0..16).map(|i| i * i).collect::<Vec<_>>());
    }
}
