//! Data-parallel execution helpers with a sequential fallback.
//!
//! All hot inner loops (batch losses, evaluation fan-out, grid oracles) go
//! through these functions. With the default `parallel` feature they run on
//! the rayon pool; without it they degrade to plain iteration. Results are
//! identical either way: outputs are collected in input order and reductions
//! use total orders, so thread count never changes a single bit.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Always-sequential variant, kept for benchmark comparisons.
pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Argmax of `score` over `0..n` with deterministic tie-breaking (lowest
/// index wins), so parallel reduction order cannot change the winner.
/// Non-finite scores are treated as negative infinity.
pub fn best_index<F>(n: usize, score: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    fn better(a: (usize, f64), b: (usize, f64)) -> (usize, f64) {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
            b
        } else {
            a
        }
    }
    let clean = |i: usize| {
        let v = score(i);
        (i, if v.is_finite() { v } else { f64::NEG_INFINITY })
    };
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(clean).reduce_with(better)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(clean).reduce(better)
    }
}

/// Sequential variant of [`best_index`], kept for benchmark comparisons.
pub fn best_index_seq<F>(n: usize, score: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64,
{
    (0..n)
        .map(|i| {
            let v = score(i);
            (i, if v.is_finite() { v } else { f64::NEG_INFINITY })
        })
        .reduce(|a, b| {
            if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_index_breaks_ties_low() {
        let scores = [1.0, 3.0, 3.0, 2.0];
        let (i, v) = best_index(scores.len(), |i| scores[i]).unwrap();
        assert_eq!((i, v), (1, 3.0));
        assert_eq!(best_index_seq(scores.len(), |i| scores[i]), Some((1, 3.0)));
    }

    #[test]
    fn best_index_ignores_nan() {
        let scores = [f64::NAN, 0.5];
        assert_eq!(best_index(2, |i| scores[i]), Some((1, 0.5)));
    }

    #[test]
    fn map_matches_sequential() {
        let sq = |i: usize| (i * i) as f64;
        assert_eq!(map_indexed(100, sq), map_indexed_seq(100, sq));
    }
}
