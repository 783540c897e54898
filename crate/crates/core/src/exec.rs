//! Index-parallel map used for per-sample work.

use alloc::vec::Vec;

/// Runs `f(0..n)` and returns the results in index order. Implementations may
/// evaluate indices concurrently, but the returned order is fixed, so every
/// reduction performed by the caller is schedule independent.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Evaluates indices one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
