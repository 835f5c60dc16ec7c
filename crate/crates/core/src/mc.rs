//! Deterministic parallel Monte Carlo driver.
//!
//! Work is cut into a fixed number of blocks that depends only on the sample
//! count. Block `b` draws from `RngStream::new(seed, b)` and results come back
//! in block order, so output is identical for any number of workers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Upper bound on the number of blocks a run is split into.
pub const MAX_BLOCKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            workers: default_workers(),
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: u64) -> Self {
        self.samples = samples;
        self
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Sizes of the blocks `samples` is cut into.
pub fn block_sizes(samples: u64) -> Vec<u64> {
    let blocks = (samples / 2).clamp(1, MAX_BLOCKS as u64);
    let base = samples / blocks;
    let extra = samples % blocks;
    (0..blocks).map(|b| base + u64::from(b < extra)).collect()
}

/// Runs `work(block_index, block_size, rng)` for every block and returns the
/// results in block order.
pub fn run_blocks<R, F>(config: &McConfig, work: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize, u64, &mut RngStream) -> Result<R> + Sync,
{
    if config.samples == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let sizes = block_sizes(config.samples);
    map_indexed(sizes.len(), config.workers, |b| {
        let mut rng = RngStream::new(config.seed, b as u64);
        work(b, sizes[b], &mut rng)
    })
}

/// Evaluates `f(0..n)` on up to `workers` threads, results in index order.
pub fn map_indexed<R, F>(n: usize, workers: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every index visited"))
        .collect()
}
