use fedser_core::federation::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Runs device updates on a rayon pool. Results keep input order, so runs
/// are identical for any worker count.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    /// `workers == 0` uses rayon's default thread count.
    pub fn new(workers: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        Self { pool }
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, R, G>(&self, items: Vec<T>, f: G) -> Vec<R>
    where
        T: Send,
        R: Send,
        G: Fn(T) -> R + Sync + Send,
    {
        self.pool.install(|| items.into_par_iter().map(f).collect())
    }
}
