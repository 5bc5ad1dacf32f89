//! Norm balls, windows and the volumes the bounds need.

use crate::error::{ensure, Error, Result};
use crate::quad;
use crate::rng::RngStream;
use crate::stats::{Estimate, Moments};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Samples used by the hit-or-miss fallback for union volumes.
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

/// Norm generating the geometry metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclidean,
    /// Maximum norm; balls are cubes.
    Sup,
}

impl Norm {
    pub fn norm(&self, v: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Sup => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Norm::Sup => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    /// `‖a − b‖ ≤ r`, compared on squared coordinates for the Euclidean norm so
    /// no square root or epsilon is involved. Ties count as inside.
    #[inline]
    pub fn within(&self, a: &[f64], b: &[f64], r: f64) -> bool {
        match self {
            Norm::Euclidean => {
                let r2 = r * r;
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    s += (x - y) * (x - y);
                    if s > r2 {
                        return false;
                    }
                }
                true
            }
            Norm::Sup => a.iter().zip(b).all(|(x, y)| (x - y).abs() <= r),
        }
    }

    /// Volume of the unit ball in `d` dimensions (`α_D`).
    pub fn unit_ball_volume(&self, d: usize) -> f64 {
        match self {
            Norm::Sup => 2f64.powi(d as i32),
            Norm::Euclidean => {
                // α_0 = 1, α_1 = 2, α_d = α_{d-2} · 2π / d
                let mut a = [1.0, 2.0];
                if d < 2 {
                    return a[d];
                }
                for k in 2..=d {
                    a[k % 2] = a[k % 2] * 2.0 * std::f64::consts::PI / k as f64;
                }
                a[d % 2]
            }
        }
    }

    /// Surface measure of the unit sphere, `d · α_d` (Euclidean only).
    fn unit_sphere_area(&self, d: usize) -> f64 {
        d as f64 * self.unit_ball_volume(d)
    }
}

/// `|𝔹(0, r)| = α_D r^D`.
pub fn ball_volume(norm: Norm, d: usize, r: f64) -> Result<f64> {
    ensure(d >= 1, "d", || "dimension must be at least 1".into())?;
    ensure(r >= 0.0, "r", || format!("radius must be nonnegative, got {r}"))?;
    Ok(norm.unit_ball_volume(d) * r.powi(d as i32))
}

/// Hit-or-miss estimate of `|𝔹(0, r)|` from the enclosing cube.
pub fn ball_volume_mc(norm: Norm, d: usize, r: f64, samples: usize, stream: RngStream) -> Estimate {
    let mut rng = stream.rng();
    let cube = (2.0 * r).powi(d as i32);
    let origin = vec![0.0; d];
    let mut p = vec![0.0; d];
    let mut m = Moments::default();
    for _ in 0..samples {
        for c in p.iter_mut() {
            *c = rng.random_range(-r..=r);
        }
        m.push(if norm.within(&p, &origin, r) { cube } else { 0.0 });
    }
    m.estimate()
}

/// Closed-form `|𝔹(0, r) ∩ 𝔹(y, r)|` where available.
fn intersection_closed_form(norm: Norm, y: &[f64], r: f64) -> Option<f64> {
    let d = y.len();
    match norm {
        Norm::Sup => Some(y.iter().map(|c| (2.0 * r - c.abs()).max(0.0)).product()),
        Norm::Euclidean => {
            let t = norm.norm(y);
            if t >= 2.0 * r {
                return Some(0.0);
            }
            match d {
                1 => Some(2.0 * r - t),
                2 => {
                    let h = t / (2.0 * r);
                    Some(2.0 * r * r * h.acos() - 0.5 * t * (4.0 * r * r - t * t).sqrt())
                }
                3 => Some(std::f64::consts::PI * (4.0 * r + t) * (2.0 * r - t).powi(2) / 12.0),
                _ => None,
            }
        }
    }
}

/// `|𝔹(0, r) ∪ 𝔹(y, r)|`. Exact for the sup norm in any dimension and for the
/// Euclidean norm in D ≤ 3; hit-or-miss Monte Carlo with
/// [`DEFAULT_MC_SAMPLES`] samples otherwise.
pub fn union_ball_volume(norm: Norm, y: &[f64], r: f64) -> Result<Estimate> {
    let d = y.len();
    let ball = ball_volume(norm, d, r)?;
    if let Some(inter) = intersection_closed_form(norm, y, r) {
        return Ok(Estimate::exact(2.0 * ball - inter));
    }
    Ok(union_ball_volume_mc(norm, y, r, DEFAULT_MC_SAMPLES, RngStream::new(0x5EED_0B11, d as u64)))
}

/// Hit-or-miss estimate of `|𝔹(0, r) ∪ 𝔹(y, r)|` from the bounding box.
pub fn union_ball_volume_mc(norm: Norm, y: &[f64], r: f64, samples: usize, stream: RngStream) -> Estimate {
    let d = y.len();
    let lo: Vec<f64> = y.iter().map(|c| c.min(0.0) - r).collect();
    let hi: Vec<f64> = y.iter().map(|c| c.max(0.0) + r).collect();
    let boxvol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let origin = vec![0.0; d];
    let mut rng = stream.rng();
    let mut p = vec![0.0; d];
    let mut m = Moments::default();
    for _ in 0..samples {
        for k in 0..d {
            p[k] = rng.random_range(lo[k]..=hi[k]);
        }
        let hit = norm.within(&p, &origin, r) || norm.within(&p, y, r);
        m.push(if hit { boxvol } else { 0.0 });
    }
    m.estimate()
}

/// `|𝔹(0, r) ∩ 𝔹(y, r)|`, derived from the union volume.
pub fn intersection_ball_volume(norm: Norm, y: &[f64], r: f64) -> Result<Estimate> {
    let u = union_ball_volume(norm, y, r)?;
    let ball = ball_volume(norm, y.len(), r)?;
    Ok(Estimate { value: (2.0 * ball - u.value).max(0.0), std_error: u.std_error })
}

/// `∫_{𝔹(0,outer) ∖ 𝔹(0,inner)} f(y) dy`.
///
/// For the Euclidean norm `f` must be isotropic; it is evaluated on the first
/// axis and integrated radially. For the sup norm `f` must be symmetric under
/// coordinate sign flips; the integral runs over the positive orthant by nested
/// quadrature. `breaks` lists coordinates where `f` has kinks.
pub fn integrate_over_shell<F>(norm: Norm, d: usize, inner: f64, outer: f64, f: F, breaks: &[f64], tol: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    if outer <= inner {
        return 0.0;
    }
    match norm {
        Norm::Euclidean => {
            let area = norm.unit_sphere_area(d);
            let g = |t: f64| {
                let mut y = vec![0.0; d];
                y[0] = t;
                f(&y) * t.powi(d as i32 - 1)
            };
            area * quad::integrate_with_breaks(g, inner, outer, breaks, tol)
        }
        Norm::Sup => {
            let orthants = 2f64.powi(d as i32);
            let cube = |side: f64| {
                if side <= 0.0 {
                    0.0
                } else {
                    let mut y = vec![0.0; d];
                    nested_cube(&f, &mut y, 0, side, breaks, tol)
                }
            };
            orthants * (cube(outer) - cube(inner))
        }
    }
}

fn nested_cube<F: Fn(&[f64]) -> f64>(f: &F, y: &mut Vec<f64>, axis: usize, side: f64, breaks: &[f64], tol: f64) -> f64 {
    let d = y.len();
    let snapshot = y.clone();
    quad::integrate_with_breaks(
        |t| {
            let mut z = snapshot.clone();
            z[axis] = t;
            if axis + 1 == d {
                f(&z)
            } else {
                nested_cube(f, &mut z, axis + 1, side, breaks, tol)
            }
        },
        0.0,
        side,
        breaks,
        tol,
    )
}

/// `∫_{-ρ}^{ρ} (L − |t|)⁺ dt`.
fn covariance_1d(len: f64, rho: f64) -> f64 {
    let m = rho.min(len);
    2.0 * (len * m - 0.5 * m * m)
}

/// An axis-aligned box window, optionally built as a halo around an inner window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lo: Vec<f64>,
    hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    halo_of: Option<(Box<Window>, f64)>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        ensure(!lo.is_empty(), "window", || "dimension must be at least 1".into())?;
        for (a, b) in lo.iter().zip(&hi) {
            ensure(a.is_finite() && b.is_finite() && a <= b, "window", || format!("bad interval [{a}, {b}]"))?;
        }
        Ok(Self { lo, hi, halo_of: None })
    }

    /// `[0, side]^d`.
    pub fn cube(d: usize, side: f64) -> Result<Self> {
        Self::new(vec![0.0; d], vec![side; d])
    }

    pub fn unit(d: usize) -> Self {
        Self::cube(d, 1.0).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn is_admissible(&self) -> bool {
        self.volume() > 0.0
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(c, (a, b))| *a <= *c && *c <= *b)
    }

    /// Box containing `𝔹(self, r)` for both supported norms.
    pub fn haloed(&self, r: f64) -> Result<Window> {
        ensure(r >= 0.0, "halo", || format!("halo must be nonnegative, got {r}"))?;
        let base = self.inner().clone();
        let total = self.halo() + r;
        Ok(Window {
            lo: base.lo.iter().map(|a| a - total).collect(),
            hi: base.hi.iter().map(|b| b + total).collect(),
            halo_of: Some((Box::new(base), total)),
        })
    }

    /// The window this one was haloed from, or itself.
    pub fn inner(&self) -> &Window {
        match &self.halo_of {
            Some((w, _)) => w,
            None => self,
        }
    }

    /// Halo radius around [`Window::inner`] (0 for plain windows).
    pub fn halo(&self) -> f64 {
        self.halo_of.as_ref().map_or(0.0, |(_, r)| *r)
    }

    /// Refuses windows whose halo is smaller than `required`.
    pub fn require_halo(&self, required: f64) -> Result<()> {
        if self.halo() + 1e-12 * required.abs() < required {
            Err(Error::MissingHalo { required, available: self.halo() })
        } else {
            Ok(())
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (k, c) in out.iter_mut().enumerate() {
            *c = if self.lo[k] == self.hi[k] { self.lo[k] } else { rng.random_range(self.lo[k]..self.hi[k]) };
        }
    }

    /// `Leb²{(x, x̃) ∈ X²: ‖x − x̃‖ ≤ r̄}` for this box, i.e. the integral of the
    /// set covariance over `𝔹(0, r̄)`.
    pub fn pair_volume(&self, norm: Norm, r_bar: f64) -> f64 {
        let lens = self.lengths();
        match norm {
            Norm::Sup => lens.iter().map(|&l| covariance_1d(l, r_bar)).product(),
            Norm::Euclidean => euclid_pair_volume(&lens, r_bar),
        }
    }
}

fn euclid_pair_volume(lens: &[f64], rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if lens.len() == 1 {
        return covariance_1d(lens[0], rho);
    }
    let (l0, rest) = (lens[0], &lens[1..]);
    let m = rho.min(l0);
    let brk: Vec<f64> = rest.iter().map(|&l| (rho * rho - l * l).max(0.0).sqrt()).collect();
    2.0 * quad::integrate_with_breaks(
        |t| (l0 - t) * euclid_pair_volume(rest, (rho * rho - t * t).max(0.0).sqrt()),
        0.0,
        m,
        &brk,
        1e-11,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ball_volume_examples() {
        assert!((ball_volume(Norm::Euclidean, 2, 1.0).unwrap() - PI).abs() < 1e-15);
        assert_eq!(ball_volume(Norm::Euclidean, 1, 2.0).unwrap(), 4.0);
        assert_eq!(ball_volume(Norm::Sup, 2, 1.0).unwrap(), 4.0);
        assert!((ball_volume(Norm::Euclidean, 3, 1.0).unwrap() - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((Norm::Euclidean.unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
        assert!(ball_volume(Norm::Euclidean, 2, -1.0).is_err());
    }

    #[test]
    fn ball_volume_mc_agrees_with_closed_form() {
        for (norm, d) in [(Norm::Euclidean, 2), (Norm::Euclidean, 3), (Norm::Euclidean, 5), (Norm::Sup, 3)] {
            let est = ball_volume_mc(norm, d, 0.7, 200_000, RngStream::new(3, d as u64));
            let exact = ball_volume(norm, d, 0.7).unwrap();
            assert!(est.gap_to(exact) < 3.0, "{norm:?} d={d}: {est:?} vs {exact}");
        }
    }

    #[test]
    fn union_examples() {
        let r = 0.8;
        for norm in [Norm::Euclidean, Norm::Sup] {
            for d in 1..=3 {
                let b = ball_volume(norm, d, r).unwrap();
                let zero = vec![0.0; d];
                assert!((union_ball_volume(norm, &zero, r).unwrap().value - b).abs() < 1e-12);
                let mut far = vec![0.0; d];
                far[0] = 2.0 * r + 0.1;
                assert!((union_ball_volume(norm, &far, r).unwrap().value - 2.0 * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn union_disc_at_unit_distance_matches_hit_or_miss() {
        let exact = union_ball_volume(Norm::Euclidean, &[1.0, 0.0], 1.0).unwrap();
        assert!(exact.is_exact());
        let mc = union_ball_volume_mc(Norm::Euclidean, &[1.0, 0.0], 1.0, 400_000, RngStream::new(9, 0));
        assert!(mc.gap_to(exact.value) < 3.0, "{mc:?} vs {exact:?}");
        // Frozen from the lens formula: 2π − (2π/3 − √3/2).
        assert!((exact.value - (2.0 * PI - (2.0 * PI / 3.0 - 3f64.sqrt() / 2.0))).abs() < 1e-12);
    }

    #[test]
    fn union_in_three_dimensions_matches_hit_or_miss() {
        let y = [0.5, 0.3, -0.2];
        let exact = union_ball_volume(Norm::Euclidean, &y, 0.6).unwrap();
        let mc = union_ball_volume_mc(Norm::Euclidean, &y, 0.6, 400_000, RngStream::new(4, 0));
        assert!(mc.gap_to(exact.value) < 3.0);
    }

    #[test]
    fn union_high_dimension_falls_back_to_monte_carlo() {
        let y = [0.4, 0.0, 0.0, 0.0];
        let est = union_ball_volume(Norm::Euclidean, &y, 0.5).unwrap();
        assert!(!est.is_exact());
        let b = ball_volume(Norm::Euclidean, 4, 0.5).unwrap();
        assert!(est.value > b && est.value < 2.0 * b);
    }

    #[test]
    fn union_at_least_three_halves_beyond_radius() {
        for norm in [Norm::Euclidean, Norm::Sup] {
            for d in 1..=3 {
                let b = ball_volume(norm, d, 1.0).unwrap();
                for k in 0..20 {
                    let theta = k as f64 * 0.31;
                    let mut y = vec![0.0; d];
                    y[0] = theta.cos();
                    if d > 1 {
                        y[1] = theta.sin();
                    }
                    let s = norm.norm(&y);
                    let scale = 1.0 + 0.05 * k as f64;
                    y.iter_mut().for_each(|c| *c *= scale / s);
                    let u = union_ball_volume(norm, &y, 1.0).unwrap().value;
                    assert!(u >= 1.5 * b - 1e-12, "{norm:?} d={d} y={y:?}");
                }
            }
        }
    }

    #[test]
    fn shell_integral_of_one_is_shell_volume() {
        for norm in [Norm::Euclidean, Norm::Sup] {
            for d in 1..=3 {
                let v = integrate_over_shell(norm, d, 0.5, 1.25, |_| 1.0, &[], 1e-10);
                let want = ball_volume(norm, d, 1.25).unwrap() - ball_volume(norm, d, 0.5).unwrap();
                assert!((v - want).abs() < 1e-9, "{norm:?} {d}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn pair_volume_matches_brute_force() {
        let w = Window::new(vec![0.0, 0.0], vec![1.0, 0.6]).unwrap();
        // Riemann-sum oracle on a grid of pairs.
        let n = 60;
        let pts: Vec<[f64; 2]> = (0..n)
            .flat_map(|i| (0..n).map(move |j| [(i as f64 + 0.5) / n as f64, 0.6 * (j as f64 + 0.5) / n as f64]))
            .collect();
        let cell = (1.0 / n as f64) * (0.6 / n as f64);
        for norm in [Norm::Euclidean, Norm::Sup] {
            let r = 0.35;
            let cnt = pts.iter().flat_map(|a| pts.iter().map(move |b| (a, b))).filter(|(a, b)| norm.within(*a, *b, r)).count();
            let approx = cnt as f64 * cell * cell;
            let exact = w.pair_volume(norm, r);
            assert!((approx - exact).abs() / exact < 0.02, "{norm:?}: {approx} vs {exact}");
        }
        // r̄ beyond the diameter covers every pair.
        assert!((w.pair_volume(Norm::Euclidean, 5.0) - 0.36).abs() < 1e-9);
        let seg = Window::new(vec![0.0], vec![2.0]).unwrap();
        assert!((seg.pair_volume(Norm::Euclidean, 0.5) - 2.0 * (2.0 * 0.5 - 0.125)).abs() < 1e-12);
    }

    #[test]
    fn halo_bookkeeping() {
        let w = Window::unit(2);
        let h = w.haloed(0.2).unwrap();
        assert_eq!(h.inner(), &w);
        assert!((h.volume() - 1.4 * 1.4).abs() < 1e-12);
        assert!(h.require_halo(0.2).is_ok());
        assert!(matches!(h.require_halo(0.3), Err(Error::MissingHalo { .. })));
        let hh = h.haloed(0.1).unwrap();
        assert!((hh.halo() - 0.3).abs() < 1e-12);
        assert_eq!(hh.inner(), &w);
    }
}
