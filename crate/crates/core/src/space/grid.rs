//! Uniform cell grid for fixed-radius neighbour queries.

use super::geometry::Norm;
use super::pattern::PointPattern;
use std::collections::HashMap;

/// Spatial hash over a pattern with cells of side at least the query radius.
pub struct CellGrid<'a> {
    pattern: &'a PointPattern,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    brute: bool,
}

impl<'a> CellGrid<'a> {
    /// Queries must use radius at most `radius`.
    pub fn new(pattern: &'a PointPattern, radius: f64) -> Self {
        let d = pattern.dim();
        // Neighbourhoods of 3^D cells stop paying off in high dimension or for
        // tiny patterns.
        let brute = d > 4 || pattern.len() < 32 || !(radius > 0.0) || !radius.is_finite();
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        if !brute {
            for (i, p) in pattern.points().enumerate() {
                cells.entry(key(p, radius)).or_default().push(i);
            }
        }
        Self { pattern, cell: radius, cells, brute }
    }

    /// Calls `f(j)` for every point `j` with `‖x − s_j‖ ≤ r` (including `x`
    /// itself when it belongs to the pattern), in increasing index order.
    pub fn for_each_within(&self, x: &[f64], r: f64, norm: Norm, mut f: impl FnMut(usize)) {
        if self.brute || r > self.cell {
            for (j, p) in self.pattern.points().enumerate() {
                if norm.within(x, p, r) {
                    f(j);
                }
            }
            return;
        }
        let base = key(x, self.cell);
        let d = base.len();
        let mut hits = Vec::new();
        let mut offset = vec![-1i64; d];
        loop {
            let k: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(list) = self.cells.get(&k) {
                for &j in list {
                    if norm.within(x, self.pattern.point(j), r) {
                        hits.push(j);
                    }
                }
            }
            let mut axis = 0;
            while axis < d && offset[axis] == 1 {
                offset[axis] = -1;
                axis += 1;
            }
            if axis == d {
                break;
            }
            offset[axis] += 1;
        }
        hits.sort_unstable();
        hits.into_iter().for_each(f);
    }

    /// Whether any point other than index `skip` lies within `r` of `x`.
    pub fn any_within_except(&self, x: &[f64], r: f64, norm: Norm, skip: Option<usize>) -> bool {
        let mut found = false;
        self.for_each_within(x, r, norm, |j| {
            if Some(j) != skip {
                found = true;
            }
        });
        found
    }
}

fn key(p: &[f64], cell: f64) -> Vec<i64> {
    p.iter().map(|c| (c / cell).floor() as i64).collect()
}
