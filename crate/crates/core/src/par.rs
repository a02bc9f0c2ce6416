//! Thread-count gate for the data-parallel paths.
//!
//! With the `parallel` feature enabled and `threads > 1`, work runs on a
//! dedicated rayon pool. Otherwise everything runs on the calling thread.
//! Callers must produce identical results either way; parallel paths only
//! change scheduling, never the order in which results are combined.

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        return with_pool(threads, || items.par_iter().map(&f).collect());
    }
    let _ = threads;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(threads: usize, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        return with_pool(threads, || (0..n).into_par_iter().map(&f).collect());
    }
    let _ = threads;
    (0..n).map(f).collect()
}

/// True when `threads` would actually fan out.
pub fn is_parallel(threads: usize) -> bool {
    cfg!(feature = "parallel") && threads > 1
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(op),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
            op()
        }
    }
}
