//! Run-level data parallelism.
//!
//! Runs and sweep points are independent, so they are mapped over with rayon
//! when the `parallel` feature is enabled. Without the feature, or with
//! [`ExecMode::Sequential`], the same closure runs in a plain loop. Results
//! are always returned in index order, so output never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

/// `(0..n).map(f)`, possibly in parallel. `jobs` caps the number of worker
/// threads; `None` uses rayon's global pool.
pub fn map_indexed<T, F>(n: usize, mode: ExecMode, jobs: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => parallel_map(n, jobs, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, jobs: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(_) => (0..n).map(f).collect(),
        },
        None => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, _jobs: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
