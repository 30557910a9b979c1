//! Order-preserving parallel map over sample indices.
//!
//! Results come back in input order regardless of thread count, so any
//! reduction done afterwards is deterministic. `FOCUS_THREADS` caps the
//! worker count.

/// Worker cap: `FOCUS_THREADS` if set (minimum 1), else the machine's
/// available parallelism.
pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("FOCUS_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Apply `f` to every item, in parallel, returning results in input order.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = thread_cap().min(items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut rest: &mut [Option<R>] = &mut slots;
        let mut offset = 0;
        let mut handles = Vec::new();
        while offset < items.len() {
            let take = chunk.min(items.len() - offset);
            let (head, tail) = rest.split_at_mut(take);
            rest = tail;
            let start = offset;
            let fref = &f;
            handles.push(scope.spawn(move || {
                for (j, slot) in head.iter_mut().enumerate() {
                    *slot = Some(fref(start + j, &items[start + j]));
                }
            }));
            offset += take;
        }
        for h in handles {
            h.join().expect("parallel_map worker panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}
