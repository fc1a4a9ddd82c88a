//! Execution strategy for batch drivers.
//!
//! Batch operations (aggregating many sets, scoring many pairs, per-instance
//! gradients) take an [`Execution`] so callers and benchmarks can pick the
//! rayon path or the sequential one at runtime. Without the `parallel`
//! feature both strategies run sequentially.
//!
//! Results are always collected in input order, and every reduction over
//! collected results happens sequentially, so both strategies produce
//! bit-identical output.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..len`, returning results in index order.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Maps `f` over a slice, returning results in slice order.
    pub fn map<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Like [`Execution::map`] but short-circuits on the first error in input order.
    pub fn try_map<S, T, E, F>(self, items: &[S], f: F) -> Result<Vec<T>, E>
    where
        S: Sync,
        T: Send,
        E: Send,
        F: Fn(&S) -> Result<T, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}
