/// Runs `f` on a dedicated rayon pool of `workers` threads, or on the global pool
/// when `workers` is `None`. Callers collect results in input order, so the
/// worker count never changes output.
pub(crate) fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("cannot build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}
