//! Ordered map over a work list, on the rayon pool when the `parallel`
//! feature is enabled and `parallel` is requested, sequentially otherwise.
//! Results always come back in input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_ordered<T, R, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.into_par_iter().map(f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}

/// Whether `map_ordered(.., true, ..)` actually fans out.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
