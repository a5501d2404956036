//! Order-preserving map over independent work items.

/// Applies `f` to every item and returns the results in input order.
/// With `threads > 1` (and the `parallel` feature) items are evaluated on a
/// dedicated pool of that size.
pub(crate) fn ordered_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = threads;
    items.iter().map(f).collect()
}

/// Worker count from `GPROMPT_THREADS`, defaulting to 1.
pub fn threads_from_env() -> usize {
    std::env::var("GPROMPT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
