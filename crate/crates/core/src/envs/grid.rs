//! Brute-force grid oracles.
//!
//! Exhaustive enumeration over discretized feasible sets, used both as
//! standalone solvers for environments without closed-form optima and as the
//! independent cross-check for those that have one. Enumeration order is
//! fixed and ties break toward the earlier point, so results are identical
//! with and without the parallel feature.

use crate::exec;

/// Best point of `f` over the `dim`-simplex scaled by `budget`, enumerated at
/// resolution `budget / steps` (all nonnegative integer compositions of
/// `steps`). Returns the maximizing point and its value.
pub fn simplex_grid_best<F>(dim: usize, steps: usize, budget: f64, f: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    assert!(dim >= 1 && steps >= 1);
    let unit = budget / steps as f64;
    if dim == 1 {
        let p = vec![budget];
        let v = f(&p);
        return (p, v);
    }
    // Parallel over the first coordinate, sequential enumeration inside.
    let per_first = exec::map_indexed(steps + 1, |k0| {
        let mut point = vec![0.0; dim];
        let mut best_point = Vec::new();
        let mut best_val = f64::NEG_INFINITY;
        point[0] = k0 as f64 * unit;
        enumerate_rest(
            &mut point,
            1,
            steps - k0,
            unit,
            &f,
            &mut best_point,
            &mut best_val,
        );
        (best_point, best_val)
    });
    per_first
        .into_iter()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("non-empty grid")
}

fn enumerate_rest<F>(
    point: &mut Vec<f64>,
    index: usize,
    remaining: usize,
    unit: f64,
    f: &F,
    best_point: &mut Vec<f64>,
    best_val: &mut f64,
) where
    F: Fn(&[f64]) -> f64,
{
    if index == point.len() - 1 {
        point[index] = remaining as f64 * unit;
        let v = f(point);
        if v > *best_val {
            *best_val = v;
            *best_point = point.clone();
        }
        return;
    }
    for k in 0..=remaining {
        point[index] = k as f64 * unit;
        enumerate_rest(point, index + 1, remaining - k, unit, f, best_point, best_val);
    }
}

/// Best point of `f` over an axis-aligned box, each dimension discretized
/// into `steps` evenly spaced values including both endpoints.
pub fn box_grid_best<F>(lo: &[f64], hi: &[f64], steps: usize, f: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    assert_eq!(lo.len(), hi.len());
    assert!(steps >= 2);
    let dim = lo.len();
    let coord = |d: usize, k: usize| lo[d] + (hi[d] - lo[d]) * k as f64 / (steps - 1) as f64;
    let per_first = exec::map_indexed(steps, |k0| {
        let mut point = vec![0.0; dim];
        point[0] = coord(0, k0);
        let mut best_point = Vec::new();
        let mut best_val = f64::NEG_INFINITY;
        let mut counters = vec![0usize; dim];
        loop {
            for d in 1..dim {
                point[d] = coord(d, counters[d]);
            }
            let v = f(&point);
            if v > best_val {
                best_val = v;
                best_point = point.clone();
            }
            // Odometer over dims 1..dim.
            let mut d = dim - 1;
            loop {
                if d == 0 {
                    return (best_point, best_val);
                }
                counters[d] += 1;
                if counters[d] < steps {
                    break;
                }
                counters[d] = 0;
                d -= 1;
            }
        }
    });
    per_first
        .into_iter()
        .reduce(|a, b| if b.1 > a.1 { b } else { a })
        .expect("non-empty grid")
}
