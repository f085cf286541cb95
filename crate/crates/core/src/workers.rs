//! Fixed-size worker groups with static block partitioning.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// A set of `size` threads. Work over a slice is split into `size`
/// contiguous blocks, one per worker; results come back in slice order.
pub struct WorkerGroup {
    size: usize,
    pool: Option<ThreadPool>,
}

impl std::fmt::Debug for WorkerGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerGroup").field("size", &self.size).finish()
    }
}

/// Half-open range of the block owned by `worker` out of `workers`.
pub fn block_range(len: usize, workers: usize, worker: usize) -> std::ops::Range<usize> {
    let base = len / workers;
    let extra = len % workers;
    let start = worker * base + worker.min(extra);
    let end = start + base + usize::from(worker < extra);
    start..end
}

impl WorkerGroup {
    pub fn new(size: usize, label: &str) -> Result<Self> {
        if size == 0 {
            return Err(Error::config(format!("worker group {label} needs >= 1 worker")));
        }
        // A single worker runs on the calling thread.
        let pool = if size > 1 {
            let name = label.to_owned();
            Some(
                ThreadPoolBuilder::new()
                    .num_threads(size)
                    .thread_name(move |i| format!("{name}-{i}"))
                    .build()
                    .map_err(|e| Error::Other(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { size, pool })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn ranges(&self, len: usize) -> Vec<std::ops::Range<usize>> {
        (0..self.size)
            .map(|w| block_range(len, self.size, w))
            .filter(|r| !r.is_empty())
            .collect()
    }

    /// Maps `f(index, item)` over `items`.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync,
    {
        let Some(pool) = &self.pool else {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        };
        let ranges = self.ranges(items.len());
        let parts: Vec<Vec<R>> = pool.install(|| {
            ranges
                .into_par_iter()
                .map(|r| r.clone().map(|i| f(i, &items[i])).collect())
                .collect()
        });
        parts.into_iter().flatten().collect()
    }

    /// Runs `f(index, item)` over `items` mutably.
    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        let Some(pool) = &self.pool else {
            items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
            return;
        };
        let ranges = self.ranges(items.len());
        let mut chunks = Vec::with_capacity(ranges.len());
        let mut rest = items;
        let mut offset = 0;
        for r in &ranges {
            let (head, tail) = rest.split_at_mut(r.end - offset);
            chunks.push((offset, head));
            offset = r.end;
            rest = tail;
        }
        pool.install(|| {
            chunks.into_par_iter().for_each(|(start, chunk)| {
                for (i, t) in chunk.iter_mut().enumerate() {
                    f(start + i, t);
                }
            })
        });
    }

    /// Runs `f(worker, range)` once per worker over a partition of `0..len`.
    pub fn run_blocks<R, F>(&self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize, std::ops::Range<usize>) -> R + Sync,
    {
        let blocks: Vec<_> = (0..self.size).map(|w| (w, block_range(len, self.size, w))).collect();
        match &self.pool {
            None => blocks.into_iter().map(|(w, r)| f(w, r)).collect(),
            Some(pool) => pool.install(|| blocks.into_par_iter().map(|(w, r)| f(w, r)).collect()),
        }
    }
}
