//! Evaluation strategy for independent per-sample work.

use alloc::vec::Vec;

/// Maps `f` over `0..n`, returning results in index order.
///
/// Implementations may run calls concurrently; results must not depend on
/// scheduling.
pub trait Executor {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R>;
}

/// Runs every call on the current thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<R: Send>(&self, n: usize, f: &(dyn Fn(usize) -> R + Sync)) -> Vec<R> {
        (0..n).map(f).collect()
    }
}
