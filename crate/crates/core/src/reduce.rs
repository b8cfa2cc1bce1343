//! Deterministic reductions.
//!
//! Parallel loops write per-item partials into an ordered buffer and the
//! buffer is folded with a fixed pairwise tree, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::scalar::Real;

const LEAF: usize = 32;

/// Pairwise sum with a fixed tree shape.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Maps every index in `0..n` in parallel and sums the results pairwise.
pub fn par_map_sum<T, F>(n: usize, f: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync + Send,
{
    let parts: Vec<T> = (0..n).into_par_iter().map(f).collect();
    pairwise_sum(&parts)
}

/// Like [`par_map_sum`] for fixed-size vectors of partial sums.
pub fn par_map_sum_n<T, F, const K: usize>(n: usize, f: F) -> [T; K]
where
    T: Real,
    F: Fn(usize) -> [T; K] + Sync + Send,
{
    let parts: Vec<[T; K]> = (0..n).into_par_iter().map(f).collect();
    let mut out = [T::zero(); K];
    let mut column = Vec::with_capacity(parts.len());
    for (k, slot) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(parts.iter().map(|row| row[k]));
        *slot = pairwise_sum(&column);
    }
    out
}

/// Parallel maximum (NaN-free inputs assumed); `T::neg_infinity()` when empty.
pub fn par_map_max<T, F>(n: usize, f: F) -> T
where
    T: Real,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(f)
        .reduce(T::neg_infinity, |a, b| if b > a { b } else { a })
}
