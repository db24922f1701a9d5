//! Deterministic task decomposition: every task owns a ChaCha stream keyed by
//! (seed, task id), so results do not depend on how tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per task. Fixed so the decomposition never depends on thread count.
pub const CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// Maps `f` over task ids `0..n_tasks`, returning results in task order.
pub fn map_tasks<T, F>(n_tasks: usize, exec: Exec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n_tasks).into_par_iter().map(f).collect()
        }
        _ => (0..n_tasks).map(f).collect(),
    }
}

/// Splits `n` samples into CHUNK-sized tasks; `f(rng, first, count)` handles one task.
pub fn run_chunked<T, F>(n: usize, seed: u64, exec: Exec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize, usize) -> T + Sync + Send,
{
    let tasks = n.div_ceil(CHUNK);
    map_tasks(tasks, exec, |t| {
        let mut rng = task_rng(seed, t as u64);
        let first = t * CHUNK;
        f(&mut rng, first, CHUNK.min(n - first))
    })
}

/// Runs `body` on a pool with `threads` workers (0 = default).
pub fn with_threads<R: Send>(threads: usize, body: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(body);
            }
        }
    }
    let _ = threads;
    body()
}
