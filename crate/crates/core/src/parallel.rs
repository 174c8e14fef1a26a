//! Order-preserving parallel map.
//!
//! Results are written back by index, so consumers that reduce in ascending
//! index order observe exactly the same values regardless of the thread
//! count. Each item is computed independently; no cross-item reduction
//! happens here.

/// Environment variable capping internal parallelism (default 1).
pub const THREADS_ENV: &str = "UNI3D_MOE_THREADS";

/// Reads the thread cap from [`THREADS_ENV`]; unset means 1.
pub fn thread_cap_from_env() -> crate::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                crate::Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            }),
        Err(_) => Ok(1),
    }
}

/// Maps `f` over `items`, returning outputs in input order.
///
/// With `threads <= 1` this is a plain sequential map.
pub fn ordered_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let workers = threads.min(items.len());
    let chunk = items.len().div_ceil(workers);
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);

    std::thread::scope(|scope| {
        let mut rest: &mut [Option<R>] = &mut out;
        let mut offset = 0;
        while offset < items.len() {
            let take = chunk.min(items.len() - offset);
            let (slot, tail) = rest.split_at_mut(take);
            rest = tail;
            let src = &items[offset..offset + take];
            let f = &f;
            scope.spawn(move || {
                for (s, item) in slot.iter_mut().zip(src) {
                    *s = Some(f(item));
                }
            });
            offset += take;
        }
    });

    out.into_iter()
        .map(|r| r.expect("worker filled slot"))
        .collect()
}
