//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the batch helpers run on rayon; without it
//! every helper degrades to a plain iterator. Output order always matches
//! input order.

/// Maps `f` over `items` on the global pool.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// A fixed-size evaluation pool reused across batches.
///
/// Idle workers pull the next pending item (rayon work stealing), so uneven
/// item costs balance on demand. One worker runs inline on the caller.
pub struct WorkerPool {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| log::warn!("falling back to sequential evaluation: {e}"))
                .ok();
            Self { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        Self { workers }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            if self.workers > 1 && items.len() > 1 {
                use rayon::prelude::*;
                return pool.install(|| items.par_iter().with_max_len(1).map(&f).collect());
            }
        }
        items.iter().map(f).collect()
    }
}

impl WorkerPool {
    /// Runs `f` with this pool as the target of nested [`par_map`] calls.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(f);
        }
        f()
    }
}

/// Maps `f` over `items` with at most `workers` concurrent calls.
pub fn map_with_workers<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    WorkerPool::new(workers).map(items, f)
}

/// Whether this build evaluates batches in parallel.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved() {
        let items: Vec<u64> = (0..500).collect();
        let expected: Vec<u64> = items.iter().map(|v| v * v).collect();
        assert_eq!(par_map(&items, |v| v * v), expected);
        for w in [1, 2, 4] {
            assert_eq!(map_with_workers(&items, w, |v| v * v), expected);
        }
    }
}
