//! Small Monte Carlo aggregation helpers.

use serde::{Deserialize, Serialize};

const ROUNDOFF_ULPS: f64 = 64.0;

/// A point estimate with its standard error. `std_error == 0` marks an exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        self.std_error == 0.0
    }

    /// `|self - other|` in units of the joint standard error. Differences
    /// within a few ulps of the values count as zero; two different exact
    /// values are infinitely far apart.
    pub fn gap(&self, other: &Estimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let roundoff = ROUNDOFF_ULPS * f64::EPSILON * self.value.abs().max(other.value.abs());
        let se = self.std_error.hypot(other.std_error);
        if diff <= roundoff {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            diff / se
        }
    }

    /// Gap against a known value.
    pub fn gap_to(&self, value: f64) -> f64 {
        self.gap(&Estimate::exact(value))
    }
}

/// Mergeable first/second moment accumulator (Welford / Chan).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.n < 2 { 0.0 } else { self.m2 / (self.n - 1) as f64 }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean(), std_error: self.std_error() }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Monte Carlo comparison of two sides of an identity evaluated on the same replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// `|mean(lhs − rhs)|` in standard errors of the paired difference.
    pub gap: f64,
    pub replicates: u64,
}

impl IdentityCheck {
    /// Builds the check from per-replicate `(lhs, rhs)` values.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut l, mut r, mut d) = (Moments::default(), Moments::default(), Moments::default());
        for (a, b) in pairs {
            l.push(a);
            r.push(b);
            d.push(a - b);
        }
        let scale = l.mean().abs().max(r.mean().abs());
        let gap = if d.mean().abs() <= ROUNDOFF_ULPS * f64::EPSILON * scale { 0.0 } else { d.estimate().gap_to(0.0) };
        Self { lhs: l.estimate(), rhs: r.estimate(), gap, replicates: d.count() }
    }

    /// Builds the check from two independent samples.
    pub fn from_independent(lhs: Estimate, rhs: Estimate, replicates: u64) -> Self {
        Self { lhs, rhs, gap: lhs.gap(&rhs), replicates }
    }

    pub fn passes(&self, sigmas: f64) -> bool {
        self.gap < sigmas
    }
}

/// Ratio estimator `sum(num) / sum(den)` over replicates with delta-method SE.
pub fn ratio_estimate(pairs: &[(f64, f64)]) -> Option<Estimate> {
    let n = pairs.len();
    let den: f64 = pairs.iter().map(|p| p.1).sum();
    if n == 0 || den <= 0.0 {
        return None;
    }
    let num: f64 = pairs.iter().map(|p| p.0).sum();
    let ratio = num / den;
    if n < 2 {
        return Some(Estimate { value: ratio, std_error: 0.0 });
    }
    let mean_den = den / n as f64;
    let resid: f64 = pairs.iter().map(|&(a, b)| (a - ratio * b).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (resid / n as f64).sqrt() / mean_den;
    Some(Estimate { value: ratio, std_error: se })
}

/// Ordinary least-squares slope and intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let all: Moments = xs.iter().copied().collect();
        let mut a: Moments = xs[..40].iter().copied().collect();
        let b: Moments = xs[40..].iter().copied().collect();
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-12);
    }

    #[test]
    fn gap_of_exact_values() {
        assert_eq!(Estimate::exact(1.0).gap_to(1.0), 0.0);
        assert!(Estimate::exact(1.0).gap_to(2.0).is_infinite());
        let rounded = Estimate { value: 1.0 + 2.0 * f64::EPSILON, std_error: 1e-17 };
        assert_eq!(rounded.gap_to(1.0), 0.0);
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 0.5).collect();
        let (s, c) = linear_fit(&xs, &ys);
        assert!((s + 2.0).abs() < 1e-12 && (c - 0.5).abs() < 1e-12);
    }
}
