//! Worker-thread executor. Results come back in index order, so the gradient
//! reduction and every metric are the same as on one thread.

use rayon::prelude::*;
use zoomnet_core::train::{Executor, Sequential};

use crate::error::{Error, Result};

pub enum Exec {
    Sequential,
    Pool(rayon::ThreadPool),
}

impl Exec {
    /// `threads == 1` runs on the calling thread; 0 uses every available core.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Exec::Sequential);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Exec::Pool)
            .map_err(|e| Error::format("thread pool", e.to_string()))
    }
}

impl Executor for Exec {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        match self {
            Exec::Sequential => Sequential.map(n, f),
            Exec::Pool(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        }
    }
}
