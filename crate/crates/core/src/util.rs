//! Small shared helpers.

/// Map `f` over indexed items, optionally across scoped worker threads.
/// Results always come back in input order, so downstream reductions are
/// deterministic regardless of the worker count.
pub fn ordered_parallel_map<I, R, F>(items: &[I], threads: usize, f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, it)| f(i, it)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut slots: Vec<Option<R>> = Vec::new();
    slots.resize_with(items.len(), || None);
    std::thread::scope(|scope| {
        let f = &f;
        let mut pending = Vec::new();
        for (piece_idx, piece) in items.chunks(chunk).enumerate() {
            let start = piece_idx * chunk;
            pending.push(scope.spawn(move || {
                let mut local = Vec::with_capacity(piece.len());
                for (k, item) in piece.iter().enumerate() {
                    local.push(f(start + k, item));
                }
                (start, local)
            }));
        }
        for handle in pending {
            let (start, local) = handle.join().expect("worker panicked");
            for (k, r) in local.into_iter().enumerate() {
                slots[start + k] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..37).collect();
        let seq = ordered_parallel_map(&items, 1, |i, &x| i * 1000 + x);
        let par = ordered_parallel_map(&items, 4, |i, &x| i * 1000 + x);
        assert_eq!(seq, par);
        assert_eq!(seq[5], 5005);
    }
}
