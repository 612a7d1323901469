//! Thin dispatch layer between rayon and plain iterators.
//!
//! With the `parallel` feature (the default) the `map_*` entry points run on
//! rayon; without it they fall back to the sequential versions. The `*_seq`
//! functions are always compiled so the bench suite can compare both paths in
//! a single binary. Every reduction here is associative and total-ordered, so
//! parallel and sequential results are bit-identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_slice_seq<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice_par<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    map_slice_par(items, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    map_slice_seq(items, f)
}

pub fn map_indexed_seq<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_indexed_par<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send>(n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    map_indexed_par(n, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U>(n: usize, f: impl Fn(usize) -> U) -> Vec<U> {
    map_indexed_seq(n, f)
}

/// Index of the maximum key over `0..n`, ties broken toward the smaller
/// index. Keys must be finite; the (key, index) order is total, so the
/// result does not depend on evaluation order.
pub fn argmax_by_key(n: usize, key: impl Fn(usize) -> f64 + Sync + Send) -> Option<usize> {
    let better = |best: (usize, f64), cand: (usize, f64)| -> (usize, f64) {
        match cand.1.total_cmp(&best.1) {
            std::cmp::Ordering::Greater => cand,
            std::cmp::Ordering::Equal if cand.0 < best.0 => cand,
            _ => best,
        }
    };
    #[cfg(feature = "parallel")]
    {
        (0..n)
            .into_par_iter()
            .map(|i| (i, key(i)))
            .reduce_with(better)
            .map(|(i, _)| i)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n)
            .map(|i| (i, key(i)))
            .fold(None, |acc, cand| {
                Some(match acc {
                    None => cand,
                    Some(best) => better(best, cand),
                })
            })
            .map(|(i, _)| i)
    }
}
