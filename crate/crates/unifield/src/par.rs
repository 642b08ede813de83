//! Data-parallel dispatch helpers.
//!
//! Hot kernels are written row-wise: each output row is produced by exactly
//! one closure with a fixed internal evaluation order, so parallel and
//! sequential execution are bitwise identical. With the `parallel` feature
//! (default) rows above a size threshold run on the rayon pool; without it
//! everything runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work (in rough flop units) below which parallel dispatch is not worth it.
pub const PAR_THRESHOLD: usize = 16 * 1024;

/// Fill disjoint output chunks of `chunk` elements, one closure call per
/// chunk; the final chunk may be short. The closure receives the chunk index.
pub fn fill_chunks<T: Send, F>(out: &mut [T], chunk: usize, work_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        let n_chunks = out.len().div_ceil(chunk);
        if work_per_chunk.saturating_mul(n_chunks) >= PAR_THRESHOLD {
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, slice)| f(i, slice));
            return;
        }
    }
    let _ = work_per_chunk;
    for (i, slice) in out.chunks_mut(chunk).enumerate() {
        f(i, slice);
    }
}

/// Sequential variant of [`fill_chunks`], kept unconditionally for benches
/// and for differential tests against the parallel path.
pub fn fill_chunks_seq<T, F>(out: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    debug_assert!(chunk > 0);
    for (i, slice) in out.chunks_mut(chunk).enumerate() {
        f(i, slice);
    }
}

/// Map each index in `0..n` to a value, in index order.
pub fn map_indexed<T: Send, F>(n: usize, work_per_item: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if work_per_item.saturating_mul(n) >= PAR_THRESHOLD {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = work_per_item;
    (0..n).map(f).collect()
}

/// Index of the maximum value under a strict total order on (value, index):
/// larger value wins, ties go to the smaller index. The comparator is
/// associative-safe, so any reduction grouping yields the same winner.
pub fn argmax_tiebreak_low(values: &[f64]) -> usize {
    fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
            b
        } else {
            a
        }
    }
    debug_assert!(!values.is_empty());
    #[cfg(feature = "parallel")]
    {
        if values.len() >= PAR_THRESHOLD {
            return values
                .par_iter()
                .enumerate()
                .map(|(i, &v)| (i, v))
                .reduce(|| (usize::MAX, f64::NEG_INFINITY), better)
                .0;
        }
    }
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, v))
        .fold((usize::MAX, f64::NEG_INFINITY), better)
        .0
}
