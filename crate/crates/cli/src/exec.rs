//! Thread-pool executor for the core training and evaluation loops.

use odesig_core::training::Executor;
use rayon::prelude::*;

pub const THREADS_ENV: &str = "ODESIG_THREADS";

/// Runs jobs on a dedicated rayon pool. Results keep index order, so output
/// does not depend on the thread count.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()?;
        Ok(Self { pool })
    }

    /// Sized by `ODESIG_THREADS`, else by the available cores.
    pub fn from_env() -> Result<Self, rayon::ThreadPoolBuildError> {
        let default = std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1);
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(default);
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_index_order() {
        let exec = Parallel::new(3).unwrap();
        assert_eq!(exec.threads(), 3);
        assert_eq!(
            exec.map(100, |i| i * i),
            (0..100).map(|i| i * i).collect::<Vec<_>>()
        );
    }
}
