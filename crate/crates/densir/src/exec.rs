//! Order-preserving execution helpers shared by the parallel and sequential
//! builds.
//!
//! Determinism contract: with the `parallel` feature on, independent items
//! are *computed* concurrently but every output lands in its input slot, and
//! all floating-point *reductions* are performed by the caller as a
//! sequential fold over that ordered output. No rayon `reduce`/`sum` is used
//! anywhere in the crate, so parallel and sequential builds produce
//! bit-identical numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`; output index i holds `f(&items[i])`.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(&f).collect()
    }
}

/// Sequential twin of [`map_ordered`], kept unconditionally compiled so the
/// bench suite can compare the two paths under the `parallel` feature.
pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`; output index i holds `f(i)`.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`map_indexed`].
pub fn map_indexed_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Fallible ordered map. On failure returns the error with the *smallest
/// input index*, independent of scheduling, so error reporting is as
/// deterministic as success output.
pub fn try_map_ordered<T, U, F>(items: &[T], f: F) -> crate::Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> crate::Result<U> + Sync + Send,
{
    let results: Vec<crate::Result<U>> = {
        #[cfg(feature = "parallel")]
        {
            items.par_iter().map(&f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items.iter().map(&f).collect()
        }
    };
    results.into_iter().collect()
}
