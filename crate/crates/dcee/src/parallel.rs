//! Deterministic data-parallel helpers.
//!
//! Heavy loops (simulating people, running benchmark replicates) are split
//! into fixed chunks; chunk results are collected in chunk order and folded
//! sequentially. Floating-point output is therefore identical whatever the
//! thread count, under work stealing, and with the `parallel` feature
//! disabled entirely — the feature only changes how fast the chunks are
//! produced.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for per-person work. Large enough to amortise scheduling,
/// small enough to spread a few thousand people across cores.
pub const PERSON_CHUNK: usize = 1024;

fn chunk_ranges(n: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(n))
        .collect()
}

/// Map `map` over fixed chunks of `0..n` and fold the per-chunk results in
/// chunk order.
pub fn chunked_fold<A, M, F>(n: usize, chunk: usize, map: M, init: A, fold: F) -> A
where
    A: Send,
    M: Fn(Range<usize>) -> A + Sync + Send,
    F: FnMut(A, A) -> A,
{
    let ranges = chunk_ranges(n, chunk);
    #[cfg(feature = "parallel")]
    let partials: Vec<A> = ranges.into_par_iter().map(map).collect();
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<A> = ranges.into_iter().map(map).collect();
    partials.into_iter().fold(init, fold)
}

/// Cap the global worker pool at `n` threads. Only affects speed — results
/// are chunk-deterministic regardless — and is a no-op in sequential builds.
/// Must be called before the first parallel operation.
pub fn configure_threads(n: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::Error::Spec(format!("cannot configure {n} worker threads: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_fold_visits_every_index_once() {
        let total = chunked_fold(
            10_001,
            64,
            |r| r.map(|i| i as u64).sum::<u64>(),
            0u64,
            |a, b| a + b,
        );
        assert_eq!(total, 10_001 * 10_000 / 2);
    }

    #[test]
    fn chunked_fold_is_order_stable() {
        // Concatenation is order sensitive, so this fails if chunks are
        // folded out of order.
        let ids = chunked_fold(
            100,
            7,
            |r| r.collect::<Vec<_>>(),
            Vec::new(),
            |mut a, mut b| {
                a.append(&mut b);
                a
            },
        );
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn ordered_map_preserves_index_order() {
        assert_eq!(ordered_map(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn empty_input_is_fine() {
        assert_eq!(chunked_fold(0, 8, |_| 1u32, 0, |a, b| a + b), 0);
        assert!(ordered_map(0, |i| i).is_empty());
    }
}
