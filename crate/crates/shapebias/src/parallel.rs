//! Rayon-backed [`Executor`]. Results come back in index order, so any
//! thread count yields the same bits as [`shapebias_core::exec::Serial`].

use rayon::prelude::*;
use shapebias_core::exec::Executor;

pub struct Threads {
    pool: rayon::ThreadPool,
}

impl Threads {
    /// `threads = 0` uses one worker per available core.
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        Self { pool }
    }

    pub fn count(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Threads {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.pool.current_num_threads() == 1 {
            return (0..n).map(f).collect();
        }
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
