//! Read-only fan-out with index-ordered results.

use std::thread;

/// Environment variable capping worker threads (default 1).
pub const THREADS_ENV: &str = "NC_FSCIL_THREADS";

pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// `(0..len).map(f).collect()`, split across at most [`thread_cap`] threads.
///
/// Output order never depends on the thread count.
pub fn map_indexed<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let threads = thread_cap().min(len.max(1));
    if threads <= 1 {
        return (0..len).map(f).collect();
    }
    let chunk = len.div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let start = w * chunk;
                let end = ((w + 1) * chunk).min(len);
                s.spawn(move || (start..end).map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}
