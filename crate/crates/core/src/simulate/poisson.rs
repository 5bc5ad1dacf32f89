//! Homogeneous Poisson sampling and its density with respect to the unit-rate process.

use crate::error::{ensure, Result};
use crate::space::{PointPattern, Window};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// Draws a Poisson count with mean `mean` (0 for `mean == 0`).
pub fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as usize
}

/// Homogeneous Poisson process of the given intensity on a box window.
pub fn sample_poisson<R: Rng + ?Sized>(window: &Window, intensity: f64, rng: &mut R) -> Result<PointPattern> {
    ensure(intensity >= 0.0 && intensity.is_finite(), "intensity", || format!("must be finite and >= 0, got {intensity}"))?;
    let d = window.dim();
    let n = poisson_count(intensity * window.volume(), rng);
    let mut coords = vec![0.0; n * d];
    for chunk in coords.chunks_exact_mut(d) {
        window.sample_uniform(rng, chunk);
    }
    Ok(PointPattern::canonical(d, coords))
}

/// `log f(ϱ) = (1 − a)·vol + |ϱ| log a`, the log density of the rate-`a`
/// process with respect to the unit-rate process on a window of volume `vol`.
pub fn log_poisson_density(n: usize, a: f64, volume: f64) -> Result<f64> {
    ensure(a >= 0.0 && a.is_finite(), "a", || format!("intensity must be finite and >= 0, got {a}"))?;
    if n == 0 {
        return Ok((1.0 - a) * volume);
    }
    if a == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((1.0 - a) * volume + n as f64 * a.ln())
}

/// Density of the rate-`a` Poisson process at `ϱ`, relative to the unit-rate process.
pub fn poisson_density(pattern: &PointPattern, a: f64, window: &Window) -> Result<f64> {
    Ok(log_poisson_density(pattern.len(), a, window.volume())?.exp())
}
