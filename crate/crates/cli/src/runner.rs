//! Thread-pool executor for the core pipeline.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use txmeta_core::Executor;

use crate::error::CliError;

/// Runs jobs on a dedicated rayon pool. Results come back in index order, so
/// outputs never depend on the number of workers.
pub struct PoolExecutor {
    pool: ThreadPool,
}

impl PoolExecutor {
    /// `workers` defaults to the available parallelism.
    pub fn new(workers: Option<usize>) -> Result<PoolExecutor, CliError> {
        let n = match workers {
            Some(0) => return Err(CliError::Validation("workers must be at least 1".into())),
            Some(n) => n,
            None => default_workers(),
        };
        let pool = ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Numerical(format!("cannot start worker pool: {e}")))?;
        Ok(PoolExecutor { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(usize::from).unwrap_or(1)
}

impl Executor for PoolExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_in_index_order() {
        let exec = PoolExecutor::new(Some(3)).unwrap();
        assert_eq!(exec.workers(), 3);
        assert_eq!(exec.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert!(PoolExecutor::new(Some(0)).is_err());
    }
}
