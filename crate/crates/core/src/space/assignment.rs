//! Optimal assignment and the matching metric `d1` on point patterns.

use super::pattern::{BoundedMetric, PointPattern};
use crate::error::{Error, Result};

/// Largest pattern size accepted by [`d1_distance`].
pub const DEFAULT_D1_LIMIT: usize = 512;

/// Minimum-cost perfect matching of a square cost matrix (row-major, `n × n`).
/// Returns the total cost and, for every row, its assigned column.
///
/// Shortest augmenting paths with vertex potentials, `O(n³)`.
pub fn solve_assignment(n: usize, cost: &[f64]) -> (f64, Vec<usize>) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    polish_ties(n, cost, &mut assign);
    (matching_cost(n, cost, &assign), assign)
}

/// The potentials leave the matching optimal only up to rounding. Pairwise
/// swaps whose cost change is at rounding level are tried and kept when they
/// lower the summed total, so near-ties resolve to the smallest float sum.
fn polish_ties(n: usize, cost: &[f64], assign: &mut [usize]) {
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(f64::MIN_POSITIVE);
    let tol = 64.0 * f64::EPSILON * scale * n as f64;
    let mut total = matching_cost(n, cost, assign);
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n {
            for k in i + 1..n {
                let (a, b) = (assign[i], assign[k]);
                let delta = cost[i * n + b] + cost[k * n + a] - cost[i * n + a] - cost[k * n + b];
                if delta > tol {
                    continue;
                }
                assign.swap(i, k);
                let candidate = matching_cost(n, cost, assign);
                if candidate < total {
                    total = candidate;
                    improved = true;
                } else {
                    assign.swap(i, k);
                }
            }
        }
    }
}

/// Cost of a matching, summed in ascending order so that matchings with the
/// same multiset of edge costs give bit-identical totals.
pub fn matching_cost(n: usize, cost: &[f64], assign: &[usize]) -> f64 {
    let mut edges: Vec<f64> = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    edges.sort_by(f64::total_cmp);
    edges.iter().sum()
}

/// `d1` with the default size limit.
pub fn d1_distance(a: &PointPattern, b: &PointPattern, d0: BoundedMetric) -> Result<f64> {
    d1_distance_limited(a, b, d0, DEFAULT_D1_LIMIT)
}

/// `d1(ϱ1, ϱ2)`: 0 for two empty patterns, 1 for different cardinalities,
/// otherwise the mean `d0` cost of an optimal matching.
pub fn d1_distance_limited(a: &PointPattern, b: &PointPattern, d0: BoundedMetric, limit: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Ok(1.0);
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    if n > limit {
        return Err(Error::TooLarge { len: n, limit });
    }
    let mut cost = Vec::with_capacity(n * n);
    for p in a.points() {
        for q in b.points() {
            cost.push(d0.distance(p, q));
        }
    }
    let (total, _) = solve_assignment(n, &cost);
    Ok((total / n as f64).clamp(0.0, 1.0))
}
