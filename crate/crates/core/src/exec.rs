//! Trial scheduling. Results always come back in trial order so that any
//! reduction over them is independent of the worker count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    Sequential,
    Parallel { workers: usize },
}

impl Schedule {
    /// `Parallel` with the given worker count, or `Sequential` for one worker.
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Schedule::Sequential
        } else {
            Schedule::Parallel { workers }
        }
    }

    /// True when this build can actually run trials concurrently.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Sequential
    }
}

/// Evaluates `f(0), …, f(n − 1)` and returns the results in index order.
pub fn map_trials<T, F>(n: u64, schedule: Schedule, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match schedule {
        Schedule::Sequential => (0..n).map(f).collect(),
        Schedule::Parallel { workers } => parallel_map(n, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: u64, _workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_trials(1000, Schedule::Sequential, |i| i * i);
        let par = map_trials(1000, Schedule::Parallel { workers: 4 }, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(Schedule::with_workers(1), Schedule::Sequential);
    }
}
