//! Data-parallel execution with a sequential fallback.
//!
//! Work items are mapped (possibly in parallel) and collected in index
//! order; all reductions happen afterwards, sequentially, so results are
//! bitwise identical whichever execution mode or thread count is used.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// State-space size below which enumeration loops stay sequential.
pub(crate) const PARALLEL_STATE_THRESHOLD: usize = 1 << 10;

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Execution {
    /// Default mode for a loop over `len` states; small loops are not worth
    /// the scheduling overhead.
    pub(crate) fn for_states(len: usize) -> Self {
        if len < PARALLEL_STATE_THRESHOLD {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    /// `(0..len).map(f).collect()`, in index order.
    pub fn map_range<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
        }
    }
}
