use plvcsar_core::sim::ReplicateRunner;
use rayon::prelude::*;

/// Runs replicates on a rayon pool; results come back in index order, so
/// reports do not depend on the number of threads.
#[derive(Debug, Default)]
pub struct Parallel {
    pool: Option<rayon::ThreadPool>,
}

impl Parallel {
    /// `threads == 0` uses the global pool.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        if threads == 0 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool: Some(pool) })
    }
}

impl ReplicateRunner for Parallel {
    fn run<T, F>(&self, count: u64, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        let work = || (0..count).into_par_iter().map(&job).collect();
        match &self.pool {
            Some(p) => p.install(work),
            None => work(),
        }
    }
}
