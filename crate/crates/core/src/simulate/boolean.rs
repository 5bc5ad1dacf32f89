//! Boolean germ-grain model with balls of bounded random radius.

use super::poisson::sample_poisson;
use crate::error::{ensure, Result};
use crate::space::{CellGrid, Norm, PointPattern, Window};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Law of the grain radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RadiusLaw {
    Deterministic { radius: f64 },
    /// Finitely many radii with their probabilities.
    Discrete { atoms: Vec<(f64, f64)> },
}

impl RadiusLaw {
    /// `(radius, probability)` atoms.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            RadiusLaw::Deterministic { radius } => vec![(*radius, 1.0)],
            RadiusLaw::Discrete { atoms } => atoms.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let atoms = self.atoms();
        ensure(!atoms.is_empty(), "radius_law", || "needs at least one atom".into())?;
        for (r, p) in &atoms {
            ensure(r.is_finite() && *r >= 0.0, "radius_law", || format!("radius {r} must be finite and >= 0"))?;
            ensure(p.is_finite() && *p >= 0.0, "radius_law", || format!("probability {p} must be >= 0"))?;
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        ensure((total - 1.0).abs() < 1e-9, "radius_law", || format!("probabilities sum to {total}, not 1"))
    }

    /// `‖R‖_∞`, the largest radius with positive probability.
    pub fn sup(&self) -> f64 {
        self.atoms().iter().filter(|a| a.1 > 0.0).fold(0.0, |m, a| m.max(a.0))
    }

    /// `E f(R)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms().iter().filter(|a| a.1 > 0.0).map(|(r, p)| p * f(*r)).sum()
    }

    /// `E R^D`.
    pub fn moment(&self, d: usize) -> f64 {
        self.expect(|r| r.powi(d as i32))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RadiusLaw::Deterministic { radius } => *radius,
            RadiusLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (r, p) in atoms {
                    acc += p;
                    if u < acc {
                        return *r;
                    }
                }
                atoms.iter().rev().find(|a| a.1 > 0.0).map_or(0.0, |a| a.0)
            }
        }
    }
}

/// Union of balls `𝔹(Y_i, R_i)` around Poisson germs of intensity `l1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BooleanModel {
    pub intensity: f64,
    pub radius: RadiusLaw,
    #[serde(default)]
    pub norm: Norm,
}

impl BooleanModel {
    pub fn new(intensity: f64, radius: RadiusLaw, norm: Norm) -> Result<Self> {
        let m = Self { intensity, radius, norm };
        m.validate()?;
        Ok(m)
    }

    pub fn deterministic(intensity: f64, radius: f64, norm: Norm) -> Result<Self> {
        Self::new(intensity, RadiusLaw::Deterministic { radius }, norm)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.intensity.is_finite() && self.intensity >= 0.0, "germ_intensity", || {
            format!("must be finite and >= 0, got {}", self.intensity)
        })?;
        self.radius.validate()
    }

    /// `r = (E R^D)^{1/D}`, the radius with `α_D r^D = E|𝔹(0, R)|`.
    pub fn moment_radius(&self, d: usize) -> f64 {
        self.radius.moment(d).powf(1.0 / d as f64)
    }

    /// `E|𝔹(0, R)|`.
    pub fn mean_grain_volume(&self, d: usize) -> f64 {
        self.norm.unit_ball_volume(d) * self.radius.moment(d)
    }

    /// Probability that a fixed location is not covered, `e^{−l1 E|𝔹(0,R)|}`.
    pub fn vacancy(&self, d: usize) -> f64 {
        (-self.intensity * self.mean_grain_volume(d)).exp()
    }
}

/// A realized set of grains.
#[derive(Debug, Clone, PartialEq)]
pub struct Grains {
    pub centers: PointPattern,
    pub radii: Vec<f64>,
    pub norm: Norm,
}

impl Grains {
    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Coverage indicator for each point of `pattern`.
    pub fn covered(&self, pattern: &PointPattern) -> Vec<bool> {
        let rmax = self.radii.iter().cloned().fold(0.0, f64::max);
        if self.is_empty() {
            return vec![false; pattern.len()];
        }
        let grid = CellGrid::new(&self.centers, rmax);
        pattern
            .points()
            .map(|x| {
                let mut hit = false;
                grid.for_each_within(x, rmax, self.norm, |j| {
                    hit = hit || self.norm.within(x, self.centers.point(j), self.radii[j]);
                });
                hit
            })
            .collect()
    }
}

/// Samples the grains hitting `region.inner()`. The region must be haloed by
/// at least `‖R‖_∞` so that grains centred outside the inner window are drawn.
pub fn sample_boolean_model<R: Rng + ?Sized>(model: &BooleanModel, region: &Window, rng: &mut R) -> Result<Grains> {
    model.validate()?;
    region.require_halo(model.radius.sup())?;
    let centers = sample_poisson(region, model.intensity, rng)?;
    let radii = (0..centers.len()).map(|_| model.radius.sample(rng)).collect();
    Ok(Grains { centers, radii, norm: model.norm })
}
