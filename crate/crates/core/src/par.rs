//! Data-parallel map helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the indexed map fans out over the
//! rayon global pool; without it the same call sites compile to a plain
//! sequential loop. Output order is by index either way, so results are
//! identical across modes.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], always available so benchmarks can
/// compare both paths inside one build.
pub fn map_indexed_seq<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Cap the rayon pool at `n` threads. Call once, before any parallel work;
/// later calls are ignored (the global pool builds exactly once). No-op in
/// sequential builds.
#[cfg(feature = "parallel")]
pub fn set_thread_cap(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn set_thread_cap(_n: usize) {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i * i) as u64;
        assert_eq!(map_indexed(100, f), map_indexed_seq(100, f));
    }
}
