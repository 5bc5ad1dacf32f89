//! Finite simple point patterns.

use super::geometry::Norm;
use super::grid::CellGrid;
use crate::error::{ensure, Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::{Read, Write};

/// A finite simple point pattern in ℝ^D, stored in canonical lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    dim: usize,
    coords: Vec<f64>,
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

impl PointPattern {
    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    /// Builds a pattern from points, sorting them canonically. Refuses
    /// non-finite coordinates and repeated points.
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        ensure(dim >= 1, "dim", || "dimension must be at least 1".into())?;
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            ensure(p.iter().all(|c| c.is_finite()), "points", || format!("non-finite coordinate in {p:?}"))?;
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    /// Like [`PointPattern::new`] but from a flat coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        ensure(dim >= 1 && coords.len() % dim == 0, "coords", || "length is not a multiple of the dimension".into())?;
        let pat = Self::canonical(dim, coords);
        for i in 1..pat.len() {
            if pat.point(i - 1) == pat.point(i) {
                return Err(Error::DuplicatePoint(i));
            }
        }
        Ok(pat)
    }

    /// Sorts without a duplicate check. Used by samplers drawing from
    /// continuous laws, where ties have probability zero.
    pub(crate) fn canonical(dim: usize, coords: Vec<f64>) -> Self {
        let n = coords.len() / dim;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| lex(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]));
        let mut out = Vec::with_capacity(coords.len());
        for i in idx {
            out.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
        }
        Self { dim, coords: out }
    }

    /// Canonical sort that carries one tag per point along.
    pub(crate) fn canonical_tagged<T: Copy>(dim: usize, coords: Vec<f64>, tags: Vec<T>) -> (Self, Vec<T>) {
        let n = coords.len() / dim;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| lex(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]));
        let mut out = Vec::with_capacity(coords.len());
        for &i in &idx {
            out.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
        }
        (Self { dim, coords: out }, idx.into_iter().map(|i| tags[i]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Points whose mask entry is true, in the same order.
    pub fn select(&self, mask: &[bool]) -> Self {
        let coords = self.points().zip(mask).filter(|(_, &m)| m).flat_map(|(p, _)| p.iter().copied()).collect();
        Self { dim: self.dim, coords }
    }

    /// Points satisfying `keep`.
    pub fn filter(&self, keep: impl Fn(&[f64]) -> bool) -> Self {
        let coords = self.points().filter(|p| keep(p)).flat_map(|p| p.iter().copied()).collect();
        Self { dim: self.dim, coords }
    }

    /// Superposition of two patterns. Coinciding points are refused.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Self::from_flat(self.dim, coords)
    }

    /// Number of points inside the closed box `[lo, hi]`.
    pub fn count_in(&self, lo: &[f64], hi: &[f64]) -> usize {
        self.points().filter(|p| p.iter().zip(lo.iter().zip(hi)).all(|(c, (a, b))| a <= c && c <= b)).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_csv_with(w, None)
    }

    /// Writes `x1,...,xD` rows, optionally with one extra 0/1 column.
    pub(crate) fn write_csv_with<W: Write>(&self, w: W, extra: Option<(&str, &[bool])>) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        if let Some((name, _)) = extra {
            header.push(name.to_string());
        }
        wr.write_record(&header).map_err(csv_err)?;
        for (i, p) in self.points().enumerate() {
            let mut row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
            if let Some((_, flags)) = extra {
                row.push(if flags[i] { "1" } else { "0" }.into());
            }
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the `x1,...,xD` format; the dimension is taken from the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        let dim = header.iter().take_while(|h| h.starts_with('x')).count();
        ensure(dim >= 1, "csv", || "expected header x1,...,xD".into())?;
        for (k, h) in header.iter().take(dim).enumerate() {
            if h != format!("x{}", k + 1) {
                return Err(Error::Parse(format!("unexpected column `{h}`")));
            }
        }
        let mut coords = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            for k in 0..dim {
                let field = rec.get(k).ok_or_else(|| Error::Parse("short row".into()))?;
                coords.push(field.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{field}`: {e}")))?);
            }
        }
        Self::from_flat(dim, coords)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// The bounded metric `d0(x, y) = min(‖x − y‖, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundedMetric {
    pub base: Norm,
}

impl BoundedMetric {
    pub fn new(base: Norm) -> Self {
        Self { base }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.base.distance(a, b).min(1.0)
    }
}

/// Number of ordered pairs `(i, j)`, `i ≠ j`, with `‖s_i − s_j‖ ≤ r̄`.
pub fn pair_count(pattern: &PointPattern, r_bar: f64, norm: Norm) -> Result<usize> {
    ensure(r_bar >= 0.0, "r_bar", || format!("must be nonnegative, got {r_bar}"))?;
    if pattern.len() < 2 {
        return Ok(0);
    }
    let grid = CellGrid::new(pattern, r_bar);
    let mut count = 0;
    for i in 0..pattern.len() {
        grid.for_each_within(pattern.point(i), r_bar, norm, |j| {
            if j != i {
                count += 1;
            }
        });
    }
    Ok(count)
}

/// Image of the pattern under `x ↦ x / T`.
pub fn contract(pattern: &PointPattern, t: f64) -> Result<PointPattern> {
    ensure(t >= 1.0, "T", || format!("contraction scale must be >= 1, got {t}"))?;
    let coords = pattern.coords.iter().map(|c| c / t).collect();
    // Division by T is monotone, so the canonical order is preserved.
    Ok(PointPattern { dim: pattern.dim, coords })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(points: &[&[f64]]) -> PointPattern {
        PointPattern::new(points[0].len(), points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn canonical_order_ignores_construction_order() {
        let a = pat(&[&[0.5, 0.1], &[0.2, 0.9], &[0.2, 0.3]]);
        let b = pat(&[&[0.2, 0.3], &[0.5, 0.1], &[0.2, 0.9]]);
        assert_eq!(a, b);
        assert_eq!(a.point(0), &[0.2, 0.3]);
    }

    #[test]
    fn duplicates_are_refused() {
        let r = PointPattern::new(1, vec![vec![0.1], vec![0.1]]);
        assert!(matches!(r, Err(Error::DuplicatePoint(_))));
    }

    #[test]
    fn pair_count_examples() {
        let r = 0.4;
        assert_eq!(pair_count(&pat(&[&[0.3, 0.3]]), r, Norm::Euclidean).unwrap(), 0);
        assert_eq!(pair_count(&pat(&[&[0.0, 0.0], &[0.2, 0.0]]), r, Norm::Euclidean).unwrap(), 2);
        // Tie at exactly r̄ counts.
        assert_eq!(pair_count(&pat(&[&[0.0], &[0.5]]), 0.5, Norm::Euclidean).unwrap(), 2);
        assert!(pair_count(&pat(&[&[0.0]]), -1.0, Norm::Euclidean).is_err());
    }

    #[test]
    fn pair_count_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let d = 1 + trial % 3;
            let n = 10 + trial;
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
            let p = PointPattern::new(d, pts).unwrap();
            for norm in [Norm::Euclidean, Norm::Sup] {
                for r in [0.0, 0.05, 0.2, 0.7, 3.0] {
                    let mut brute = 0;
                    for i in 0..p.len() {
                        for j in 0..p.len() {
                            if i != j && norm.distance(p.point(i), p.point(j)) <= r {
                                brute += 1;
                            }
                        }
                    }
                    assert_eq!(pair_count(&p, r, norm).unwrap(), brute);
                }
            }
        }
    }

    #[test]
    fn contract_examples() {
        let p = pat(&[&[0.5, 2.0], &[3.0, 1.0]]);
        assert_eq!(contract(&p, 1.0).unwrap(), p);
        let c = contract(&p, 4.0).unwrap();
        assert_eq!(c.len(), p.len());
        assert_eq!(c.point(1), &[0.75, 0.25]);
        assert!(contract(&p, 0.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = pat(&[&[0.125, -3.5], &[1e-7, 2.0 / 3.0]]);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2\n"));
        assert_eq!(PointPattern::read_csv(&buf[..]).unwrap(), p);
        let empty = PointPattern::read_csv("x1,x2,x3\n".as_bytes()).unwrap();
        assert_eq!(empty.dim(), 3);
        assert!(empty.is_empty());
    }

    #[test]
    fn bounded_metric_caps_at_one() {
        let m = BoundedMetric::new(Norm::Euclidean);
        assert_eq!(m.distance(&[0.0, 0.0], &[3.0, 4.0]), 1.0);
        assert!((m.distance(&[0.0, 0.0], &[0.3, 0.4]) - 0.5).abs() < 1e-15);
    }
}
