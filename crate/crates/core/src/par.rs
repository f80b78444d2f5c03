//! Thin indirection over rayon so every data-parallel site in the crate has a
//! sequential fallback. With the `parallel` feature (on by default) the
//! mappers fan out over the global rayon pool; without it they degrade to
//! plain loops. Results are ordered by index either way, so numeric output
//! does not depend on thread scheduling.

/// Maps `f` over `0..n`, preserving index order in the result.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving index order in the result.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    map_indexed_seq(n, f)
}

/// Sequential twin of [`map_indexed`], always available. Benches use it to
/// measure the speedup of the parallel path against the same workload.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Runs `f` over disjoint row chunks of `out` (rows of length `row_len`).
/// Each invocation receives the starting row index and the mutable chunk.
#[cfg(feature = "parallel")]
pub fn for_each_row_chunk<F>(out: &mut [f64], row_len: usize, rows_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    use rayon::prelude::*;
    out.par_chunks_mut(row_len * rows_per_chunk)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| f(chunk_idx * rows_per_chunk, chunk));
}

/// Runs `f` over disjoint row chunks of `out` (rows of length `row_len`).
#[cfg(not(feature = "parallel"))]
pub fn for_each_row_chunk<F>(out: &mut [f64], row_len: usize, rows_per_chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    for (chunk_idx, chunk) in out.chunks_mut(row_len * rows_per_chunk).enumerate() {
        f(chunk_idx * rows_per_chunk, chunk);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        let s = map_indexed_seq(100, |i| i * i);
        assert_eq!(v, s);
    }
}
