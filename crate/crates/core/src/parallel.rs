//! Order-preserving data-parallel map with a sequential fallback.
//!
//! Everything in this crate that fans out over independent work items
//! (risk-transform grid points, Gram rows, replicates, grid-search cells)
//! goes through [`map`] or [`map_range`]. With the `parallel` feature the
//! items run on the current rayon pool; without it they run sequentially.
//! Output order equals input order in both cases, so results are identical
//! regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
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

/// Map `f` over the index range `0..len`, preserving order.
pub fn map_range<U, F>(len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = map(&xs, |&x| x * x);
        assert!(ys.iter().enumerate().all(|(i, &y)| y == (i * i) as u64));
    }

    #[test]
    fn map_range_matches_sequential() {
        let ys = map_range(257, |i| i as f64 / 256.0);
        for (i, y) in ys.iter().enumerate() {
            assert_eq!(*y, i as f64 / 256.0);
        }
    }
}
