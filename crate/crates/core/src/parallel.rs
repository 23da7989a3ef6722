//! Execution strategy for the data-parallel loops (grid search, Monte Carlo
//! replications, per-study evaluation).
//!
//! Every loop reduces with an associative, order-independent operation, so
//! both strategies return bit-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

#[allow(clippy::derivable_impls)]
impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Maps `f` over `0..len` and collects results in index order.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
        }
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map_slice<A, T, F>(self, items: &[A], f: F) -> Vec<T>
    where
        A: Sync,
        T: Send,
        F: Fn(&A) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
        }
    }

    /// Sums `f` over `0..len` as u64 counts.
    pub fn count<F>(self, len: u64, f: F) -> u64
    where
        F: Fn(u64) -> u64 + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..len).map(f).sum(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).sum(),
        }
    }
}
