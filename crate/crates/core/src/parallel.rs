//! Data-parallel map used by sweeps and Monte-Carlo runs.
//!
//! With the `parallel` feature the work runs on a rayon pool; without it (or
//! with `jobs == 1`) items are processed in order on the calling thread.
//! Output order always matches input order.

/// Map `f` over `items` with at most `jobs` workers (`0` = all cores).
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if jobs != 1 && items.len() > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build();
            if let Ok(pool) = pool {
                return pool.install(|| items.par_iter().map(&f).collect());
            }
        }
    }
    let _ = jobs;
    items.iter().map(f).collect()
}

/// Whether this build can run work in parallel.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
