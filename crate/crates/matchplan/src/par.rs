//! Batch mapping over independent per-query work, data-parallel when the
//! `parallel` feature is enabled and sequential otherwise. Output order
//! always matches input order, so downstream artifacts are identical under
//! both execution modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, parallel when the feature allows it.
pub fn batch_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always-sequential map, kept as the comparison arm for benchmarks and as
/// the execution path when byte-for-byte reproduction matters more than
/// throughput.
pub fn batch_map_sequential<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
