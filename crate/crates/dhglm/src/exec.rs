//! Thread-pool executor for per-sample fits.

use dhglm_core::exec::Executor;
use rayon::prelude::*;

/// Environment variable read when no worker count is given.
pub const WORKERS_ENV: &str = "DHGLM_WORKERS";

/// Runs per-sample work on a dedicated rayon pool. Results come back in
/// index order, so output never depends on the worker count.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    /// `workers = None` falls back to `DHGLM_WORKERS`, then to the number of
    /// available cores.
    pub fn new(workers: Option<usize>) -> anyhow::Result<Self> {
        let n = resolve_workers(workers)?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

pub fn resolve_workers(workers: Option<usize>) -> anyhow::Result<usize> {
    let n = match workers {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{WORKERS_ENV} must be a positive integer, got `{v}`"))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    anyhow::ensure!(n > 0, "worker count must be at least 1");
    Ok(n)
}

impl Executor for Pool {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dhglm_core::exec::Sequential;

    #[test]
    fn matches_sequential_order() {
        let pool = Pool::new(Some(3)).unwrap();
        assert_eq!(pool.workers(), 3);
        let f = |i: usize| i * i + 1;
        assert_eq!(pool.map(1000, &f), Sequential.map(1000, &f));
    }

    #[test]
    fn zero_workers_rejected() {
        assert!(Pool::new(Some(0)).is_err());
    }
}
