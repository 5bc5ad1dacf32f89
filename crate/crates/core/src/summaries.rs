//! Summary statistics over replicated patterns: Ripley's K, the nearest
//! neighbour function G, its two-point analogue, the capacity functional of a
//! Boolean model and the overlap function `b`.
//!
//! Estimators use minus sampling: reference points are taken from the inner
//! window only, neighbours from the whole haloed sampling window.

use crate::error::{ensure, Error, Result};
use crate::par;
use crate::simulate::BooleanModel;
use crate::space::{intersection_ball_volume, union_ball_volume, CellGrid, Norm, PointPattern, Window};
use crate::stats::{ratio_estimate, Estimate, Moments};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default displacement tolerance of [`estimate_g2`], relative to `‖y‖`.
pub const DEFAULT_G2_TOLERANCE: f64 = 0.05;

/// Estimates on a grid of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEstimate {
    pub r: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Replicates for K, reference points for G, qualifying pairs for G2.
    pub n: Vec<u64>,
}

impl SummaryEstimate {
    pub fn estimate(&self, i: usize) -> Estimate {
        Estimate { value: self.values[i], std_error: self.std_errors[i] }
    }

    /// Rows `r,value,stderr,n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "value", "stderr", "n"]).map_err(|e| Error::Io(e.to_string()))?;
        for i in 0..self.r.len() {
            wr.write_record([self.r[i].to_string(), self.values[i].to_string(), self.std_errors[i].to_string(), self.n[i].to_string()])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<f64> {
    ensure(!grid.is_empty(), "r_grid", || "must not be empty".into())?;
    ensure(grid.iter().all(|r| r.is_finite() && *r >= 0.0), "r_grid", || "radii must be finite and >= 0".into())?;
    ensure(grid.windows(2).all(|w| w[0] <= w[1]), "r_grid", || "radii must be nondecreasing".into())?;
    Ok(*grid.last().unwrap())
}

/// Indices of the points of `p` inside `inner`.
fn reference_points(p: &PointPattern, inner: &Window) -> Vec<usize> {
    (0..p.len()).filter(|&i| inner.contains(p.point(i))).collect()
}

/// `K̂(r)`: ordered pairs within `r` with the first point in the inner window,
/// over `m1² |inner|`, averaged over replicates. `m1` is the known intensity.
pub fn estimate_k(patterns: &[PointPattern], window: &Window, m1: f64, r_grid: &[f64], norm: Norm) -> Result<SummaryEstimate> {
    ensure(m1 > 0.0 && m1.is_finite(), "m1", || format!("K is undefined for intensity {m1}"))?;
    let rmax = check_grid(r_grid)?;
    window.require_halo(rmax)?;
    ensure(!patterns.is_empty(), "patterns", || "need at least one replicate".into())?;
    let inner = window.inner();
    let scale = m1 * m1 * inner.volume();
    let per_rep = par::map_items(patterns, |p| {
        let grid = CellGrid::new(p, rmax);
        let mut counts = vec![0u64; r_grid.len()];
        for i in reference_points(p, inner) {
            let x = p.point(i);
            grid.for_each_within(x, rmax, norm, |j| {
                if j != i {
                    let d = norm.distance(x, p.point(j));
                    let k = r_grid.partition_point(|&r| r < d);
                    if k < counts.len() {
                        counts[k] += 1;
                    }
                }
            });
        }
        // Cumulate bins into counts within each radius.
        let mut acc = 0;
        counts.iter().map(|c| {
            acc += c;
            acc as f64 / scale
        }).collect::<Vec<f64>>()
    });
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for k in 0..r_grid.len() {
        let m: Moments = per_rep.iter().map(|v| v[k]).collect();
        values.push(m.mean());
        ses.push(m.std_error());
    }
    Ok(SummaryEstimate { r: r_grid.to_vec(), values, std_errors: ses, n: vec![patterns.len() as u64; r_grid.len()] })
}

/// `Ĝ(r)`: pooled fraction of inner-window points whose nearest neighbour lies
/// within `r`, with a ratio-estimator standard error over replicates.
pub fn estimate_g(patterns: &[PointPattern], window: &Window, r_grid: &[f64], norm: Norm) -> Result<SummaryEstimate> {
    let rmax = check_grid(r_grid)?;
    window.require_halo(rmax)?;
    let inner = window.inner();
    let per_rep = par::map_items(patterns, |p| {
        let grid = CellGrid::new(p, rmax);
        let refs = reference_points(p, inner);
        let mut hits = vec![0.0; r_grid.len()];
        for &i in &refs {
            let x = p.point(i);
            let mut nearest = f64::INFINITY;
            grid.for_each_within(x, rmax, norm, |j| {
                if j != i {
                    nearest = nearest.min(norm.distance(x, p.point(j)));
                }
            });
            for (k, &r) in r_grid.iter().enumerate() {
                if nearest <= r {
                    hits[k] += 1.0;
                }
            }
        }
        (hits, refs.len() as f64)
    });
    let total: f64 = per_rep.iter().map(|p| p.1).sum();
    if total == 0.0 {
        return Err(Error::Undefined("no reference points in any replicate".into()));
    }
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for k in 0..r_grid.len() {
        let pairs: Vec<(f64, f64)> = per_rep.iter().map(|(h, n)| (h[k], *n)).collect();
        let e = ratio_estimate(&pairs).expect("positive total");
        values.push(e.value);
        ses.push(e.std_error);
    }
    Ok(SummaryEstimate { r: r_grid.to_vec(), values, std_errors: ses, n: vec![total as u64; r_grid.len()] })
}

/// `Ĝ_{2,y}(r)`: among ordered pairs `(s_i, s_j)` with `s_i` in the inner
/// window and `‖(s_j − s_i) − y‖ ≤ tolerance·‖y‖`, the fraction having a third
/// point within `r` of `s_i` or of `s_j`. The window must be haloed by
/// `(1 + tolerance)‖y‖ + max r`.
pub fn estimate_g2(
    patterns: &[PointPattern],
    window: &Window,
    y: &[f64],
    r_grid: &[f64],
    norm: Norm,
    tolerance: f64,
) -> Result<SummaryEstimate> {
    let rmax = check_grid(r_grid)?;
    if y.len() != window.dim() {
        return Err(Error::DimensionMismatch { expected: window.dim(), got: y.len() });
    }
    let ynorm = norm.norm(y);
    ensure(ynorm > 0.0, "y", || "displacement must be nonzero".into())?;
    ensure(tolerance > 0.0 && tolerance < 1.0, "tolerance", || format!("must lie in (0, 1), got {tolerance}"))?;
    let reach = (1.0 + tolerance) * ynorm;
    window.require_halo(reach + rmax)?;
    let inner = window.inner();
    let bin = tolerance * ynorm;
    let search = reach.max(rmax);
    let per_rep = par::map_items(patterns, |p| {
        let grid = CellGrid::new(p, search);
        let mut hits = vec![0.0; r_grid.len()];
        let mut pairs = 0.0;
        let mut target = vec![0.0; y.len()];
        for i in reference_points(p, inner) {
            let x = p.point(i);
            for (t, (a, b)) in target.iter_mut().zip(x.iter().zip(y)) {
                *t = a + b;
            }
            grid.for_each_within(x, reach, norm, |j| {
                if j == i || !norm.within(p.point(j), &target, bin) {
                    return;
                }
                pairs += 1.0;
                // Nearest third point to either end of the pair.
                let mut nearest = f64::INFINITY;
                for end in [x, p.point(j)] {
                    grid.for_each_within(end, rmax, norm, |k| {
                        if k != i && k != j {
                            nearest = nearest.min(norm.distance(end, p.point(k)));
                        }
                    });
                }
                for (k, &r) in r_grid.iter().enumerate() {
                    if nearest <= r {
                        hits[k] += 1.0;
                    }
                }
            });
        }
        (hits, pairs)
    });
    let total: f64 = per_rep.iter().map(|p| p.1).sum();
    if total == 0.0 {
        return Err(Error::Undefined(format!(
            "no pairs with displacement within {bin} of {y:?} in {} replicates",
            patterns.len()
        )));
    }
    let mut values = Vec::new();
    let mut ses = Vec::new();
    for k in 0..r_grid.len() {
        let pairs: Vec<(f64, f64)> = per_rep.iter().map(|(h, n)| (h[k], *n)).collect();
        let e = ratio_estimate(&pairs).expect("positive total");
        values.push(e.value);
        ses.push(e.std_error);
    }
    Ok(SummaryEstimate { r: r_grid.to_vec(), values, std_errors: ses, n: vec![total as u64; r_grid.len()] })
}

/// `T(C) = 1 − exp(−l1 E|𝔹(0, R) ⊕ C|)` for `C` a singleton or a pair of points.
pub fn capacity_functional(model: &BooleanModel, points: &[Vec<f64>]) -> Result<Estimate> {
    model.validate()?;
    match points {
        [x] => Ok(Estimate::exact(1.0 - model.vacancy(x.len()))),
        [x, xt] => {
            if x.len() != xt.len() {
                return Err(Error::DimensionMismatch { expected: x.len(), got: xt.len() });
            }
            let y: Vec<f64> = xt.iter().zip(x).map(|(a, b)| a - b).collect();
            let (vol, var) = mix_over_radius(model, |r| union_ball_volume(model.norm, &y, r))?;
            let t = 1.0 - (-model.intensity * vol).exp();
            // Delta method through the exponential.
            let se = model.intensity * (-model.intensity * vol).exp() * var.sqrt();
            Ok(Estimate { value: t, std_error: se })
        }
        _ => Err(Error::Unsupported(format!("capacity functional of {} points", points.len()))),
    }
}

/// `E f(R)` over the radius law with the summed variance of the per-atom estimates.
fn mix_over_radius(model: &BooleanModel, f: impl Fn(f64) -> Result<Estimate>) -> Result<(f64, f64)> {
    let mut mean = 0.0;
    let mut var = 0.0;
    for (r, p) in model.radius.atoms() {
        if p > 0.0 {
            let e = if r > 0.0 { f(r)? } else { Estimate::exact(0.0) };
            mean += p * e.value;
            var += (p * e.std_error).powi(2);
        }
    }
    Ok((mean, var))
}

/// `b(y) = E|𝔹(0,R) ∖ 𝔹(y,R)| / E|𝔹(0,R)|`.
pub fn b_function(model: &BooleanModel, y: &[f64]) -> Result<Estimate> {
    model.validate()?;
    let d = y.len();
    let denom = model.mean_grain_volume(d);
    ensure(denom > 0.0, "radius_law", || "b is undefined when E R^D = 0".into())?;
    let (inter, var) = mix_over_radius(model, |r| intersection_ball_volume(model.norm, y, r))?;
    Ok(Estimate { value: ((denom - inter) / denom).clamp(0.0, 1.0), std_error: var.sqrt() / denom })
}
