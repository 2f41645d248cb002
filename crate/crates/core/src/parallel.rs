//! Execution strategy for batch stages.
//!
//! Trials and per-sample codings are independent, so the batch loops in this
//! crate are expressed through [`map_indexed`]. With the `parallel` feature
//! (default) the work is distributed over the rayon pool; the sequential path
//! is always available and is the only path when the feature is disabled.
//! Results are collected in index order either way, so aggregation is
//! deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent tasks is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Execution::Parallel
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Execution::Sequential
    }
}

/// Applies `f` to every index in `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

/// Applies `f` to every element of `items`, returning results in input order.
pub fn map_slice<'a, I, T, F>(items: &'a [I], exec: Execution, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let seq = map_indexed(100, Execution::Sequential, |i| i * i);
        assert_eq!(seq, (0..100).map(|i| i * i).collect::<Vec<_>>());
        #[cfg(feature = "parallel")]
        {
            let par = map_indexed(100, Execution::Parallel, |i| i * i);
            assert_eq!(seq, par);
        }
    }
}
